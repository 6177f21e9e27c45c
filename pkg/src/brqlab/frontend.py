"""Audio front end: PCM16 WAV decoding, 80-bin log-Mel features, frame stacking.

The pipeline is fixed and non-learned: 25 ms Hann windows every 10 ms,
512-point DFT, 80 triangular HTK-Mel filters over 0-8 kHz, natural log with
a 1e-10 floor. Stacking four consecutive frames stands in for a strided
convolutional downsampler.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import CorruptFile, EmptyInput, InvalidConfig, TooShort, UnsupportedFormat

SAMPLE_RATE = 16000
WIN = 400
HOP = 160
N_FFT = 512
N_MELS = 80
LOG_FLOOR = 1e-10
MEL_MAGIC = b"MEL80\0\0\0"


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


def load_wav(path) -> AudioBuffer:
    """Decode a mono 16 kHz PCM16 WAV into samples scaled by 1/32768."""
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate, n = w.getnchannels(), w.getsampwidth(), w.getframerate(), w.getnframes()
            if channels != 1 or width != 2 or rate != SAMPLE_RATE:
                raise UnsupportedFormat(
                    f"{path}: need mono 16-bit {SAMPLE_RATE} Hz, got {channels} ch / {8 * width} bit / {rate} Hz"
                )
            raw = w.readframes(n)
    except wave.Error as exc:
        msg = str(exc)
        if "unknown format" in msg or "not a WAVE" in msg or "does not start with RIFF" in msg:
            raise UnsupportedFormat(f"{path}: {msg}") from exc
        raise CorruptFile(f"{path}: {msg}") from exc
    except (EOFError, struct.error) as exc:
        raise CorruptFile(f"{path}: truncated header") from exc
    if len(raw) != 2 * n:
        raise CorruptFile(f"{path}: data chunk holds {len(raw)} bytes, header promises {2 * n}")
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioBuffer(pcm.astype(np.float64) / 32768.0, SAMPLE_RATE)


def write_wav(path, samples: np.ndarray) -> None:
    """Write float samples in [-1, 1] as PCM16 (round to nearest, clipped)."""
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(pcm.tobytes())


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=None)
def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT, sr: int = SAMPLE_RATE,
                   fmin: float = 0.0, fmax: float = SAMPLE_RATE / 2) -> np.ndarray:
    """(n_fft//2 + 1, n_mels) triangular weights, peak 1 at each center, unnormalized."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sr / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling)).T
    fb.setflags(write=False)
    return fb


def mel_centers(n_mels: int = N_MELS) -> np.ndarray:
    return mel_to_hz(np.linspace(0.0, hz_to_mel(SAMPLE_RATE / 2), n_mels + 2))[1:-1]


def num_frames(n_samples: int) -> int:
    return 1 + (n_samples - WIN) // HOP


def power_frames(samples: np.ndarray) -> np.ndarray:
    """Hann-windowed one-sided power spectra |X|^2 / n_fft, shape (T, 257)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size < WIN:
        raise TooShort(f"need at least {WIN} samples, got {x.size}")
    frames = np.lib.stride_tricks.sliding_window_view(x, WIN)[::HOP]
    spec = np.fft.rfft(frames * np.hanning(WIN + 1)[:-1], n=N_FFT, axis=1)
    return (spec.real ** 2 + spec.imag ** 2) / N_FFT


def log_mel_spectrogram(audio) -> np.ndarray:
    """(T, 80) natural-log Mel energies with T = 1 + (N - 400) // 160."""
    samples = audio.samples if isinstance(audio, AudioBuffer) else audio
    energy = power_frames(samples) @ mel_filterbank()
    return np.log(np.maximum(energy, LOG_FLOOR))


def stack_frames(mel: np.ndarray, stack: int = 4) -> np.ndarray:
    """Concatenate non-overlapping groups of ``stack`` rows; the tail is dropped."""
    if stack < 1:
        raise InvalidConfig("stack must be >= 1")
    T, F = mel.shape
    if T < stack:
        raise EmptyInput(f"{T} frames cannot fill a stack of {stack}")
    n = T // stack
    return mel[: n * stack].reshape(n, stack * F)


@dataclass(frozen=True)
class FeatureNormalizer:
    """Per-bin mean/std of log-Mel frames, estimated once over a corpus."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, mels, min_std: float = 1e-5) -> "FeatureNormalizer":
        rows = np.concatenate(list(mels), axis=0)
        return cls(rows.mean(axis=0), np.maximum(rows.std(axis=0), min_std))

    @classmethod
    def identity(cls, n_bins: int = N_MELS) -> "FeatureNormalizer":
        return cls(np.zeros(n_bins), np.ones(n_bins))

    def __call__(self, mel: np.ndarray) -> np.ndarray:
        return (mel - self.mean) / self.std


def write_mel(path, mel: np.ndarray) -> None:
    T, F = mel.shape
    with open(path, "wb") as fh:
        fh.write(MEL_MAGIC)
        fh.write(struct.pack("<II", T, F))
        fh.write(np.ascontiguousarray(mel, dtype="<f4").tobytes())


def read_mel(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:8] != MEL_MAGIC:
        raise UnsupportedFormat(f"{path}: bad magic")
    if len(data) < 16:
        raise CorruptFile(f"{path}: truncated header")
    T, F = struct.unpack("<II", data[8:16])
    body = data[16:]
    if len(body) != 4 * T * F:
        raise CorruptFile(f"{path}: expected {4 * T * F} payload bytes, got {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(T, F).astype(np.float64)
