"""Synthetic tone corpus, JSONL manifests and duration-capped batching."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyManifest, InvalidRange
from .frontend import SAMPLE_RATE, write_wav
from .prng import Prng, derive_seed

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: str
    duration_s: float


def class_band(k: int) -> tuple[float, float]:
    return 300.0 + 400.0 * k, 600.0 + 400.0 * k


def synth_utterance(label: int, duration_s: float, rng: Prng) -> np.ndarray:
    """Three sinusoids from the class band, peak-normalized to 0.5, plus N(0, 0.01^2) noise."""
    n = int(round(duration_s * SAMPLE_RATE))
    lo, hi = class_band(label)
    freqs = rng.uniform_between(lo, hi, 3)
    phases = rng.uniform_between(0.0, 2 * math.pi, 3)
    t = np.arange(n) / SAMPLE_RATE
    x = np.sin(2 * math.pi * freqs[:, None] * t + phases[:, None]).sum(axis=0)
    x *= 0.5 / np.max(np.abs(x))
    x += rng.normal(n, 0.0, 0.01)
    return np.clip(x, -1.0, 1.0)


def gen_synthetic_corpus(out_dir, n_utts: int = 200, class_count: int = 4,
                         duration_range_s=(2.0, 4.0), seed: int = 0):
    """Write wavs/, manifest.jsonl and labels.jsonl under ``out_dir``.

    Labels cycle 0, 1, ..., class_count - 1 so classes stay balanced.
    Returns (entries, labels).
    """
    lo, hi = duration_range_s
    if n_utts < 1 or class_count < 2:
        raise InvalidRange(f"need n_utts >= 1 and class_count >= 2, got {n_utts}, {class_count}")
    if not 400 / SAMPLE_RATE <= lo <= hi:
        raise InvalidRange(f"bad duration range {duration_range_s}")
    out = Path(out_dir)
    (out / "wavs").mkdir(parents=True, exist_ok=True)
    entries, labels = [], {}
    for i in range(n_utts):
        rng = Prng(derive_seed(seed, f"utt/{i}"))
        label = i % class_count
        n = int(round(rng.uniform_between(lo, hi, 1)[0] * SAMPLE_RATE))
        uid = f"utt{i:05d}"
        rel = f"wavs/{uid}.wav"
        write_wav(out / rel, synth_utterance(label, n / SAMPLE_RATE, rng))
        entries.append(ManifestEntry(uid, str(out / rel), n / SAMPLE_RATE))
        labels[uid] = label
    with open(out / "manifest.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for e in entries:
            fh.write(json.dumps({"id": e.id, "path": Path(e.path).relative_to(out).as_posix(),
                                 "duration_s": e.duration_s}) + "\n")
    with open(out / "labels.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for uid, label in labels.items():
            fh.write(json.dumps({"id": uid, "label": label}) + "\n")
    return entries, labels


def load_manifest(path) -> list[ManifestEntry]:
    """Read a JSONL manifest; relative paths resolve against its directory."""
    path = Path(path)
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            wav = Path(obj["path"])
            entries.append(ManifestEntry(str(obj["id"]), str(wav if wav.is_absolute() else path.parent / wav),
                                         float(obj["duration_s"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidRange(f"{path}:{lineno}: bad manifest line ({exc})") from exc
    if not entries:
        raise EmptyManifest(f"{path} has no entries")
    return entries


def load_labels(path) -> dict[str, int]:
    labels = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            obj = json.loads(line)
            labels[str(obj["id"])] = int(obj["label"])
    return labels


def dynamic_batches(durations, max_batch_seconds: float, rng: Prng | None = None):
    """Greedy duration-capped batches over a (shuffled) utterance order.

    Returns (batches, warnings) where each batch is a list of indices into
    ``durations``. An utterance longer than the cap becomes a singleton.
    ``rng=None`` keeps the input order.
    """
    durations = [float(d) for d in durations]
    if not durations:
        raise EmptyManifest("no utterances to batch")
    if any(d <= 0 for d in durations):
        raise InvalidRange("durations must be positive")
    order = range(len(durations)) if rng is None else rng.permutation(len(durations))
    batches, warnings = [], []
    current, total = [], 0.0
    for i in order:
        i = int(i)
        d = durations[i]
        if d > max_batch_seconds:
            warnings.append(f"utterance {i} ({d:.2f} s) exceeds the {max_batch_seconds} s cap; batched alone")
            log.warning(warnings[-1])
            if current:
                batches.append(current)
                current, total = [], 0.0
            batches.append([i])
            continue
        if current and total + d > max_batch_seconds:
            batches.append(current)
            current, total = [], 0.0
        current.append(i)
        total += d
    if current:
        batches.append(current)
    return batches, warnings
