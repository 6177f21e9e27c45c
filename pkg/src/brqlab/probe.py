"""Frozen-upstream probing.

The pre-trained predictor is frozen. Its two hidden states are mixed with
softmax layer weights, mean-pooled over frames, and fed to a linear
classifier. The classifier and the layer-weight logits are trained
together by full-batch gradient descent.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import ProbeConfig, TrainConfig
from .errors import DegenerateLabels, EmptyEval, InvalidConfig
from .frontend import AudioBuffer, FeatureNormalizer, log_mel_spectrogram, stack_frames
from .predictor import PARAM_NAMES, forward
from .prng import Prng, derive_seed
from .quantizer import xavier_bound


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class LayerWeights:
    logits: np.ndarray  # one per hidden state (h1, h2)

    @classmethod
    def uniform(cls, n: int = 2) -> "LayerWeights":
        return cls(np.zeros(n))

    @classmethod
    def from_weights(cls, w) -> "LayerWeights":
        """Logits reproducing ``w`` exactly where possible; zero weights map to -inf."""
        with np.errstate(divide="ignore"):
            return cls(np.log(np.asarray(w, dtype=np.float64)))

    @property
    def weights(self) -> np.ndarray:
        return softmax(self.logits)


@dataclass
class ProbeParams:
    W: np.ndarray  # (H, n_classes)
    b: np.ndarray


@dataclass(frozen=True)
class Upstream:
    """A frozen predictor plus what it needs to turn audio into its inputs."""

    params: dict
    normalizer: FeatureNormalizer
    context_radius: int
    stack: int
    name: str = ""

    @classmethod
    def from_checkpoint(cls, path) -> "Upstream":
        header, tensors = load_checkpoint(path)
        cfg = TrainConfig.from_dict(header["config"])
        for arr in tensors.values():
            arr.setflags(write=False)
        return cls({n: tensors[n] for n in PARAM_NAMES},
                   FeatureNormalizer(tensors["normalizer.mean"], tensors["normalizer.std"]),
                   cfg.predictor.context_radius, cfg.stack, str(path))

    def hidden_states(self, audio: AudioBuffer | np.ndarray):
        feats = stack_frames(self.normalizer(log_mel_spectrogram(audio)), self.stack)
        acts = forward(self.params, feats, self.context_radius, with_logits=False)
        return acts.h1, acts.h2

    def pooled_states(self, audio) -> np.ndarray:
        """(2, H): frame-mean of h1 and of h2."""
        h1, h2 = self.hidden_states(audio)
        return np.stack([h1.mean(axis=0), h2.mean(axis=0)])


def extract_features(upstream: Upstream, layer_weights: LayerWeights, audio) -> np.ndarray:
    """Mean over frames of w1*h1 + w2*h2 (length H)."""
    w = layer_weights.weights
    h1, h2 = upstream.hidden_states(audio)
    return (w[0] * h1 + w[1] * h2).mean(axis=0)


def _mix(states: np.ndarray, w: np.ndarray) -> np.ndarray:
    # mean pooling is linear, so mixing pooled states equals pooling mixed frames
    return np.einsum("l,nlh->nh", w, states)


def probe_logits(probe: ProbeParams, layer_weights: LayerWeights, states: np.ndarray) -> np.ndarray:
    return _mix(states, layer_weights.weights) @ probe.W + probe.b


def train_probe(states: np.ndarray, labels, config: ProbeConfig = ProbeConfig(), seed: int = 0,
                n_classes: int | None = None, trace: list | None = None):
    """Fit (ProbeParams, LayerWeights) on pooled states of shape (N, L, H).

    If ``trace`` is a list, the layer weights after every step are appended.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if np.unique(labels).size < 2:
        raise DegenerateLabels("probe training needs at least two classes")
    if config.lr <= 0 or config.steps < 0:
        raise InvalidConfig("probe lr must be > 0 and steps >= 0")
    N, L, H = states.shape
    C = int(n_classes or labels.max() + 1)
    rng = Prng(derive_seed(seed, "probe-init"))
    a = xavier_bound(H, C)
    probe = ProbeParams(rng.uniform_between(-a, a, H * C).reshape(H, C), np.zeros(C))
    lw = LayerWeights.uniform(L)
    onehot = np.eye(C)[labels]
    for _ in range(config.steps):
        w = lw.weights
        feats = _mix(states, w)
        dz = (softmax(feats @ probe.W + probe.b) - onehot) / N
        gW, gb = feats.T @ dz, dz.sum(axis=0)
        dfeat = dz @ probe.W.T
        gw = np.einsum("nh,nlh->l", dfeat, states)
        glogit = w * (gw - np.dot(w, gw))
        probe.W -= config.lr * gW
        probe.b -= config.lr * gb
        lw.logits = lw.logits - config.lr * glogit
        if trace is not None:
            trace.append(lw.weights)
    return probe, lw


def evaluate_probe(probe: ProbeParams, layer_weights: LayerWeights, states: np.ndarray, labels) -> float:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise EmptyEval("no evaluation examples")
    pred = np.argmax(probe_logits(probe, layer_weights, states), axis=1)
    return float(np.mean(pred == labels))


def confusion_matrix(pred, labels, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(pred)), 1)
    return cm


def split_indices(n: int, test_fraction: float, seed: int):
    """Deterministic shuffled split -> (train_idx, test_idx), both sorted."""
    perm = Prng(derive_seed(seed, "probe-split")).permutation(n)
    n_test = max(1, int(round(n * test_fraction)))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


@dataclass
class ProbeResult:
    checkpoint: str
    seed: int
    train_acc: float
    test_acc: float
    w_h1: float
    w_h2: float

    def row(self) -> list:
        return [self.checkpoint, self.seed, f"{self.train_acc:.6f}", f"{self.test_acc:.6f}",
                f"{self.w_h1:.6f}", f"{self.w_h2:.6f}"]


PROBE_HEADER = ["checkpoint", "seed", "train_acc", "test_acc", "w_h1", "w_h2"]


def pooled_corpus_states(upstream: Upstream, mels) -> np.ndarray:
    """Pooled (N, 2, H) states for already-normalized Mel matrices."""
    out = []
    for mel in mels:
        acts = forward(upstream.params, stack_frames(mel, upstream.stack), upstream.context_radius, with_logits=False)
        out.append(np.stack([acts.h1.mean(axis=0), acts.h2.mean(axis=0)]))
    return np.stack(out)


def run_probe(upstream: Upstream, mels, labels, config: ProbeConfig = ProbeConfig(), seed: int = 0,
              name: str | None = None) -> ProbeResult:
    labels = np.asarray(labels, dtype=np.int64)
    states = pooled_corpus_states(upstream, mels)
    train_idx, test_idx = split_indices(len(labels), config.test_fraction, seed)
    probe, lw = train_probe(states[train_idx], labels[train_idx], config, seed, n_classes=int(labels.max()) + 1)
    w = lw.weights
    return ProbeResult(name if name is not None else (Path(upstream.name).name or "in-memory"), seed,
                       evaluate_probe(probe, lw, states[train_idx], labels[train_idx]),
                       evaluate_probe(probe, lw, states[test_idx], labels[test_idx]),
                       float(w[0]), float(w[1]))
