"""Span masking over Mel frames.

Each frame independently starts a span with probability ``start_prob``; a
span covers its start and the following ``span - 1`` frames. Covered rows are
overwritten with Gaussian noise, and the mask is reduced to the stacked rate
with ANY so every corrupted stacked frame is a loss position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig, LengthMismatch
from .prng import Prng


@dataclass(frozen=True)
class MaskPolicy:
    start_prob: float = 0.15
    span: int = 4
    noise_std: float = 0.1
    noise_mean: float = 0.0

    def validate(self) -> None:
        if not 0.0 <= self.start_prob <= 1.0:
            raise InvalidConfig(f"start_prob {self.start_prob} outside [0, 1]")
        if self.span < 1:
            raise InvalidConfig("span must be >= 1")
        if self.noise_std < 0:
            raise InvalidConfig("noise_std must be >= 0")


@dataclass(frozen=True)
class MaskSpec:
    covered: np.ndarray  # bool, (T,)
    starts: np.ndarray  # sorted int64
    span: int

    @property
    def coverage(self) -> float:
        return float(self.covered.mean()) if self.covered.size else 0.0

    def interior_coverage(self) -> float:
        """Coverage over frames that every span offset can reach (t >= span - 1)."""
        inner = self.covered[self.span - 1:]
        return float(inner.mean()) if inner.size else 0.0


def spans_to_covered(starts: np.ndarray, T: int, span: int) -> np.ndarray:
    hit = np.zeros(T + span, dtype=np.int32)
    np.add.at(hit, starts, 1)
    np.add.at(hit, np.asarray(starts) + span, -1)
    return np.cumsum(hit[:T]) > 0


def sample_mask(T: int, policy: MaskPolicy, rng: Prng) -> MaskSpec:
    policy.validate()
    if T < 1:
        raise InvalidConfig("T must be >= 1")
    starts = np.flatnonzero(rng.uniform(T) < policy.start_prob)
    return MaskSpec(spans_to_covered(starts, T, policy.span), starts, policy.span)


def expected_coverage(policy: MaskPolicy) -> float:
    """Marginal probability that an interior frame is covered: 1 - (1 - p)^span."""
    policy.validate()
    if policy.span == 1:
        return float(policy.start_prob)
    return 1.0 - (1.0 - policy.start_prob) ** policy.span


def apply_mask(mel: np.ndarray, mask: MaskSpec, policy: MaskPolicy, rng: Prng) -> np.ndarray:
    """Copy of ``mel`` with covered rows replaced by N(noise_mean, noise_std) draws."""
    if mask.covered.shape[0] != mel.shape[0]:
        raise LengthMismatch(f"mask covers {mask.covered.shape[0]} frames, features have {mel.shape[0]}")
    out = np.array(mel, dtype=np.float64, copy=True)
    rows = np.flatnonzero(mask.covered)
    if rows.size:
        noise = rng.normal(rows.size * mel.shape[1], policy.noise_mean, policy.noise_std)
        out[rows] = noise.reshape(rows.size, mel.shape[1])
    return out


def reduce_mask(mask: MaskSpec | np.ndarray, stack: int) -> np.ndarray:
    covered = mask.covered if isinstance(mask, MaskSpec) else np.asarray(mask, dtype=bool)
    if stack < 1:
        raise InvalidConfig("stack must be >= 1")
    n = covered.shape[0] // stack
    return covered[: n * stack].reshape(n, stack).any(axis=1)


def coverage_report(policy: MaskPolicy, n_frames: int, rng: Prng) -> dict:
    """One mask-stats row: analytic vs empirical interior coverage."""
    m = sample_mask(n_frames, policy, rng)
    return {
        "start_prob": policy.start_prob,
        "span": policy.span,
        "analytic_coverage": expected_coverage(policy),
        "empirical_coverage": m.interior_coverage(),
        "n_frames": n_frames,
    }
