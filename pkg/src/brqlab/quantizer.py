"""Frozen random-projection quantizer.

A stacked feature frame x is projected with a fixed random matrix, and its
target is the index of the codebook row nearest to the projection once both
are scaled to unit length. Nothing here is ever trained: the matrices are
created read-only and :func:`quantize` is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, IndexOutOfRange, InvalidConfig
from .prng import Prng


@dataclass(frozen=True)
class QuantizerConfig:
    seed: int = 0
    input_dim: int = 320
    code_dim: int = 16
    codebook_size: int = 8192

    def validate(self) -> None:
        if self.input_dim < 1 or self.code_dim < 1 or self.codebook_size < 1:
            raise InvalidConfig(f"quantizer dims must be >= 1: {self}")


@dataclass(frozen=True)
class Quantizer:
    projection: np.ndarray  # (D, code_dim)
    codebook: np.ndarray  # (K, code_dim)
    config: QuantizerConfig
    unit_codebook: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        unit = self.codebook / np.linalg.norm(self.codebook, axis=1, keepdims=True)
        for arr in (self.projection, self.codebook, unit):
            arr.setflags(write=False)
        object.__setattr__(self, "unit_codebook", unit)

    def trainable_parameters(self) -> int:
        """Always 0; every array is frozen."""
        return sum(a.size for a in (self.projection, self.codebook) if a.flags.writeable)

    def __call__(self, feats: np.ndarray) -> np.ndarray:
        return quantize(self, feats)


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_quantizer(config: QuantizerConfig) -> Quantizer:
    """Xavier-uniform projection then standard-normal codebook, from one stream."""
    config.validate()
    D, d, K = config.input_dim, config.code_dim, config.codebook_size
    rng = Prng(config.seed)
    a = xavier_bound(D, d)
    projection = rng.uniform_between(-a, a, D * d).reshape(D, d)
    codebook = rng.normal(K * d).reshape(K, d)
    return Quantizer(projection, codebook, config)


def quantize(q: Quantizer, feats: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Target index per row of ``feats`` (T', D) -> int64 array of length T'.

    Squared distance between the unit projection and each unit code is
    |p_hat|^2 + 1 - 2 p_hat.c_hat; a zero projection stays zero, so all codes
    tie at distance 1 and index 0 wins. np.argmin keeps the lowest index on ties.
    """
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != q.config.input_dim:
        raise DimensionMismatch(f"expected (T, {q.config.input_dim}) features, got {feats.shape}")
    out = np.empty(feats.shape[0], dtype=np.int64)
    unit_t = q.unit_codebook.T
    for lo in range(0, feats.shape[0], chunk):
        p = feats[lo:lo + chunk] @ q.projection
        norm = np.linalg.norm(p, axis=1, keepdims=True)
        p_hat = np.divide(p, norm, out=np.zeros_like(p), where=norm > 0)
        dist2 = np.sum(p_hat * p_hat, axis=1, keepdims=True) + 1.0 - 2.0 * (p_hat @ unit_t)
        out[lo:lo + chunk] = np.argmin(dist2, axis=1)
    return out


@dataclass(frozen=True)
class UtilizationStats:
    histogram: np.ndarray
    normalized_entropy: float
    distinct_codes: int


def normalized_entropy(histogram: np.ndarray) -> float:
    K = histogram.size
    if K == 1:
        return 1.0
    total = histogram.sum()
    p = histogram[histogram > 0] / total
    return float(-(p * np.log(p)).sum() / math.log(K))


def codebook_utilization(targets, K: int) -> UtilizationStats:
    if isinstance(targets, (list, tuple)):
        targets = np.concatenate([np.asarray(t, dtype=np.int64) for t in targets]) if targets else np.zeros(0, np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    if targets.size and (targets.min() < 0 or targets.max() >= K):
        raise IndexOutOfRange(f"target outside [0, {K})")
    hist = np.bincount(targets, minlength=K)
    ent = normalized_entropy(hist) if targets.size else 0.0
    return UtilizationStats(hist, ent, int(np.count_nonzero(hist)))


def format_target_line(utt_id: str, indices) -> str:
    return " ".join([utt_id, *(str(int(i)) for i in indices)]) + "\n"


def parse_target_line(line: str) -> tuple[str, np.ndarray]:
    utt_id, *rest = line.rstrip("\n").split(" ")
    return utt_id, np.array([int(v) for v in rest], dtype=np.int64)
