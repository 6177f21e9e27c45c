"""Masked-prediction network with hand-derived gradients.

Two tanh layers over a (2r+1)-frame context window, then a linear layer to
codebook logits. Loss is softmax cross-entropy averaged over masked stacked
positions only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyMask, InvalidConfig, InvalidEpsilon, LengthMismatch, ShapeMismatch
from .prng import Prng, derive_seed
from .quantizer import xavier_bound

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W_out", "b_out")

Params = Dict[str, np.ndarray]


@dataclass(frozen=True)
class PredictorConfig:
    input_dim: int = 320
    hidden_dim: int = 256
    context_radius: int = 1
    codebook_size: int = 64
    seed: int = 0

    def validate(self) -> None:
        if self.input_dim < 1 or self.hidden_dim < 1 or self.codebook_size < 1 or self.context_radius < 0:
            raise InvalidConfig(f"bad predictor config: {self}")

    @property
    def context_dim(self) -> int:
        return (2 * self.context_radius + 1) * self.input_dim


def param_shapes(config: PredictorConfig) -> dict[str, tuple[int, ...]]:
    H, K = config.hidden_dim, config.codebook_size
    return {
        "W1": (config.context_dim, H), "b1": (H,),
        "W2": (H, H), "b2": (H,),
        "W_out": (H, K), "b_out": (K,),
    }


def init_predictor(config: PredictorConfig) -> Params:
    """Xavier-uniform weights (drawn W1, W2, W_out in order), zero biases."""
    config.validate()
    rng = Prng(config.seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            a = xavier_bound(*shape)
            params[name] = rng.uniform_between(-a, a, shape[0] * shape[1]).reshape(shape)
    return params


def context_window(feats: np.ndarray, radius: int) -> np.ndarray:
    """Row t -> concat(feats[t-r], ..., feats[t+r]), zero rows past either edge."""
    if radius == 0:
        return feats
    T, D = feats.shape
    padded = np.zeros((T + 2 * radius, D))
    padded[radius:radius + T] = feats
    return np.concatenate([padded[k:k + T] for k in range(2 * radius + 1)], axis=1)


@dataclass
class Activations:
    x: np.ndarray  # context inputs, (T', (2r+1)D)
    h1: np.ndarray
    h2: np.ndarray
    logits: np.ndarray
    lengths: list = field(default_factory=list)


def forward(params: Params, feats, radius: int, with_logits: bool = True) -> Activations:
    """Forward pass on one (T', D) sequence or a list of them.

    Sequences in a list get their own zero-padded context windows and the
    rows are concatenated in order. ``with_logits=False`` stops after h2,
    which is all a probe needs.
    """
    seqs: Sequence[np.ndarray] = [feats] if isinstance(feats, np.ndarray) else list(feats)
    D = params["W1"].shape[0] // (2 * radius + 1)
    for s in seqs:
        if s.ndim != 2 or s.shape[1] != D or params["W1"].shape[0] != (2 * radius + 1) * D:
            raise DimensionMismatch(f"features {s.shape} do not fit W1 {params['W1'].shape} at radius {radius}")
    x = np.concatenate([context_window(np.asarray(s, dtype=np.float64), radius) for s in seqs], axis=0)
    h1 = np.tanh(x @ params["W1"] + params["b1"])
    h2 = np.tanh(h1 @ params["W2"] + params["b2"])
    logits = h2 @ params["W_out"] + params["b_out"] if with_logits else None
    return Activations(x, h1, h2, logits, [len(s) for s in seqs])


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _check_targets(logits, targets, loss_mask):
    targets = np.asarray(targets, dtype=np.int64)
    loss_mask = np.asarray(loss_mask, dtype=bool)
    if targets.shape[0] != logits.shape[0] or loss_mask.shape[0] != logits.shape[0]:
        raise LengthMismatch(f"logits {logits.shape[0]}, targets {targets.shape[0]}, mask {loss_mask.shape[0]}")
    rows = np.flatnonzero(loss_mask)
    if rows.size == 0:
        raise EmptyMask("no masked positions")
    return targets, rows


def masked_ce_loss(logits: np.ndarray, targets, loss_mask) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over masked rows; per-position losses are 0 elsewhere."""
    targets, rows = _check_targets(logits, targets, loss_mask)
    per_pos = np.zeros(logits.shape[0])
    lsm = log_softmax(logits[rows])
    per_pos[rows] = -lsm[np.arange(rows.size), targets[rows]]
    return float(per_pos[rows].mean()), per_pos


def backward(params: Params, acts: Activations, targets, loss_mask) -> Params:
    """Exact gradients of :func:`masked_ce_loss` w.r.t. every parameter.

    Only masked rows carry signal (dlogits is zero elsewhere), so the chain
    rule runs on those rows, in ascending frame order.
    """
    targets, rows = _check_targets(acts.logits, targets, loss_mask)
    if acts.x.shape[1] != params["W1"].shape[0] or acts.logits.shape[1] != params["W_out"].shape[1]:
        raise ShapeMismatch("activations were not produced by these params")
    M = rows.size
    dlogits = np.exp(log_softmax(acts.logits[rows]))
    dlogits[np.arange(M), targets[rows]] -= 1.0
    dlogits /= M
    x, h1, h2 = acts.x[rows], acts.h1[rows], acts.h2[rows]
    dz2 = (dlogits @ params["W_out"].T) * (1.0 - h2 * h2)
    dz1 = (dz2 @ params["W2"].T) * (1.0 - h1 * h1)
    return {
        "W1": x.T @ dz1, "b1": dz1.sum(axis=0),
        "W2": h1.T @ dz2, "b2": dz2.sum(axis=0),
        "W_out": h2.T @ dlogits, "b_out": dlogits.sum(axis=0),
    }


def loss_fn(params: Params, feats, radius: int, targets, loss_mask) -> float:
    return masked_ce_loss(forward(params, feats, radius).logits, targets, loss_mask)[0]


def grad_check(config: PredictorConfig, n_trials: int = 10, eps: float = 1e-5, seq_len: int = 3,
               seed: int = 0, bias_std: float = 0.1) -> dict:
    """Compare :func:`backward` with central differences on every coordinate.

    Relative error per coordinate is |a - f| / max(|a|, |f|, 1e-8). Returns
    the maximum overall and per tensor. Trial weights are drawn at Xavier
    scale with small random biases: deeply saturated tanh units give
    gradients near 1e-8, where float64 central differences carry no
    relative accuracy at all.
    """
    if not eps > 0:
        raise InvalidEpsilon(f"epsilon must be positive, got {eps}")
    config.validate()
    shapes = param_shapes(config)
    if sum(math.prod(s) for s in shapes.values()) > 10_000:
        raise InvalidConfig("grad_check is meant for small models (<= 1e4 parameters)")
    rng = Prng(derive_seed(seed, "grad-check"))
    r, K = config.context_radius, config.codebook_size
    worst = {name: 0.0 for name in PARAM_NAMES}
    for _ in range(n_trials):
        params = {}
        for n, s in shapes.items():
            if len(s) == 1:
                params[n] = rng.normal(s[0], 0.0, bias_std)
            else:
                a = xavier_bound(*s)
                params[n] = rng.uniform_between(-a, a, s[0] * s[1]).reshape(s)
        feats = rng.normal(seq_len * config.input_dim).reshape(seq_len, config.input_dim)
        targets = np.array([rng.below(K) for _ in range(seq_len)])
        mask = rng.uniform(seq_len) < 0.5
        mask[rng.below(seq_len)] = True
        acts = forward(params, feats, r)
        grads = backward(params, acts, targets, mask)
        for name in PARAM_NAMES:
            p = params[name]
            flat = p.reshape(-1)
            g = grads[name].reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + eps
                up = loss_fn(params, feats, r, targets, mask)
                flat[i] = keep - eps
                down = loss_fn(params, feats, r, targets, mask)
                flat[i] = keep
                fd = (up - down) / (2 * eps)
                rel = abs(g[i] - fd) / max(abs(g[i]), abs(fd), 1e-8)
                worst[name] = max(worst[name], rel)
    return {"max_rel_error": max(worst.values()), "per_tensor": worst, "trials": n_trials, "eps": eps}
