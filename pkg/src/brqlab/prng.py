"""Seedable xoshiro256** generator with splitmix64 seeding.

Every random draw in brqlab goes through :class:`Prng` so that a run is a
pure function of its seed. Streams for different purposes (quantizer init,
mask sampling, noise infill, batching, ...) are separated by deriving a
sub-seed with :func:`derive_seed` instead of sharing one generator.

The bulk generator is compiled with numba when it is importable; the pure
Python loop is kept as a fallback and as the reference the compiled path is
tested against.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

MASK64 = (1 << 64) - 1
_TWO_POW_M53 = 2.0 ** -53


def splitmix64(x: int) -> tuple[int, int]:
    """One splitmix64 step: returns (new_state, output)."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return x, z ^ (z >> 31)


def tag_hash(tag: str) -> int:
    return int.from_bytes(hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest(), "little")


def derive_seed(seed: int, tag: str) -> int:
    """Sub-seed for an independent stream: splitmix64(seed XOR hash(tag))."""
    return splitmix64((int(seed) ^ tag_hash(tag)) & MASK64)[1]


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


def _fill_py(s: np.ndarray, out: np.ndarray) -> None:
    s0, s1, s2, s3 = (int(v) for v in s)
    for i in range(out.size):
        out[i] = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
    s[:] = (s0, s1, s2, s3)


try:
    from numba import njit

    @njit(cache=True)
    def _fill_jit(s, out):  # pragma: no cover - compiled
        s0 = s[0]
        s1 = s[1]
        s2 = s[2]
        s3 = s[3]
        five = np.uint64(5)
        nine = np.uint64(9)
        for i in range(out.size):
            r = s1 * five
            r = (r << np.uint64(7)) | (r >> np.uint64(57))
            out[i] = r * nine
            t = s1 << np.uint64(17)
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = (s3 << np.uint64(45)) | (s3 >> np.uint64(19))
        s[0] = s0
        s[1] = s1
        s[2] = s2
        s[3] = s3

    @njit(cache=True)
    def _box_muller_jit(s, out):  # pragma: no cover - compiled
        n = out.size
        pairs = (n + 1) // 2
        bits = np.empty(2 * pairs, dtype=np.uint64)
        _fill_jit(s, bits)
        for i in range(pairs):
            u1 = (np.float64(bits[2 * i] >> np.uint64(11)) + 0.5) * _TWO_POW_M53
            u2 = (np.float64(bits[2 * i + 1] >> np.uint64(11)) + 0.5) * _TWO_POW_M53
            radius = math.sqrt(-2.0 * math.log(u1))
            angle = 2.0 * math.pi * u2
            out[2 * i] = radius * math.cos(angle)
            if 2 * i + 1 < n:
                out[2 * i + 1] = radius * math.sin(angle)

    _fill = _fill_jit
    _box_muller = _box_muller_jit
except ImportError:  # pragma: no cover
    _fill = _fill_py
    _box_muller = None


class Prng:
    """xoshiro256** stream.

    Uniforms are 53-bit and lie strictly inside (0, 1). Normals come from
    Box-Muller; each pair of uniforms yields two normals emitted in order,
    and an odd request discards the spare so no state hides outside ``s``.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        x = self.seed
        words = []
        for _ in range(4):
            x, z = splitmix64(x)
            words.append(z)
        self.s = np.array(words, dtype=np.uint64)

    def child(self, tag: str) -> "Prng":
        return Prng(derive_seed(self.seed, tag))

    def u64(self, n: int) -> np.ndarray:
        out = np.empty(int(n), dtype=np.uint64)
        if n:
            _fill(self.s, out)
        return out

    def next_u64(self) -> int:
        return int(self.u64(1)[0])

    def uniform(self, n: int) -> np.ndarray:
        bits = self.u64(n) >> np.uint64(11)
        return (bits.astype(np.float64) + 0.5) * _TWO_POW_M53

    def uniform_between(self, low: float, high: float, n: int) -> np.ndarray:
        return low + (high - low) * self.uniform(n)

    def normal(self, n: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        n = int(n)
        if _box_muller is not None:
            z = np.empty(n)
            if n:
                _box_muller(self.s, z)
            return mean + std * z
        return mean + std * self._normal_numpy(n)

    def _normal_numpy(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log(u[:, 0]))
        angle = 2.0 * np.pi * u[:, 1]
        z = np.empty((pairs, 2))
        z[:, 0] = radius * np.cos(angle)
        z[:, 1] = radius * np.sin(angle)
        return z.reshape(-1)[:n]

    def below(self, bound: int) -> int:
        """Integer in [0, bound)."""
        return min(int(self.uniform(1)[0] * bound), bound - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n)."""
        perm = np.arange(n)
        if n < 2:
            return perm
        u = self.uniform(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = min(int(u[k] * (i + 1)), i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm
