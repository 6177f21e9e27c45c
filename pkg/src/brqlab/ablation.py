"""Masking-ratio x codebook-size sweep.

Each cell trains fresh quantizer/predictor pairs for three seeds at a fixed
step budget and records final masked accuracy, final loss, probe accuracy
and codebook utilization. Cell seeds depend only on the base seed and the
cell itself, so the grid can be reordered, split or run in parallel
without changing any row.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .config import TrainConfig
from .errors import BrqError, InvalidGrid
from .masking import expected_coverage
from .predictor import init_predictor
from .probe import Upstream, run_probe
from .prng import MASK64, derive_seed, splitmix64, tag_hash
from .trainer import FeatureCorpus, pretrain

log = logging.getLogger(__name__)

REPORT_GRID = tuple((p, K) for p in (0.01, 0.05, 0.10, 0.12) for K in (1024, 8192))
TREND_GRID = ((0.01, 64), (0.10, 64))

SWEEP_HEADER = [
    "start_prob", "codebook_size", "status", "seeds", "steps",
    "coverage_overlap", "coverage_nominal",
    "masked_acc_mean", "masked_acc_std", "loss_mean", "loss_std",
    "probe_acc_mean", "probe_acc_std", "probe_acc_random_init_mean",
    "util_entropy_mean", "util_entropy_std",
]


@dataclass(frozen=True)
class AblationGrid:
    cells: tuple

    def validate(self) -> None:
        if not self.cells:
            raise InvalidGrid("empty ablation grid")
        for p, K in self.cells:
            if not 0.0 <= p <= 1.0:
                raise InvalidGrid(f"start_prob {p} outside [0, 1]")
            if int(K) < 2:
                raise InvalidGrid(f"codebook_size {K} < 2")


def cell_seed(base_seed: int, start_prob: float, codebook_size: int) -> int:
    return splitmix64((int(base_seed) ^ tag_hash(f"start_prob={start_prob!r};codebook_size={int(codebook_size)}")) & MASK64)[1]


def _stats(values):
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def run_cell(corpus: FeatureCorpus, labels, base: TrainConfig, start_prob: float, codebook_size: int,
             n_seeds: int = 3) -> dict:
    cfg = replace(base.with_codebook(int(codebook_size)), mask=replace(base.mask, start_prob=start_prob))
    root = cell_seed(base.seed, start_prob, codebook_size)
    row = {"start_prob": start_prob, "codebook_size": int(codebook_size), "seeds": n_seeds, "steps": cfg.steps,
           "coverage_overlap": expected_coverage(cfg.mask),
           "coverage_nominal": min(1.0, start_prob * cfg.mask.span)}
    acc, loss, probe_acc, probe_rand, ent = [], [], [], [], []
    try:
        for i in range(n_seeds):
            seeded = replace(cfg, seed=derive_seed(root, f"rep/{i}"))
            run = pretrain(corpus, seeded)
            acc.append(run.final("masked_acc"))
            loss.append(run.final("loss"))
            ent.append(run.utilization.normalized_entropy)
            radius = cfg.predictor.context_radius
            trained = Upstream(run.params, corpus.normalizer, radius, cfg.stack)
            untrained = Upstream(init_predictor(seeded.predictor_config()), corpus.normalizer, radius, cfg.stack)
            probe_acc.append(run_probe(trained, corpus.mels, labels, cfg.probe, seeded.seed).test_acc)
            probe_rand.append(run_probe(untrained, corpus.mels, labels, cfg.probe, seeded.seed).test_acc)
    except (BrqError, ArithmeticError, ValueError) as exc:
        log.error("cell p=%s K=%s failed: %s", start_prob, codebook_size, exc)
        row["status"] = f"failed: {type(exc).__name__}"
        return row
    row["status"] = "ok"
    row["masked_acc_mean"], row["masked_acc_std"] = _stats(acc)
    row["loss_mean"], row["loss_std"] = _stats(loss)
    row["probe_acc_mean"], row["probe_acc_std"] = _stats(probe_acc)
    row["probe_acc_random_init_mean"] = _stats(probe_rand)[0]
    row["util_entropy_mean"], row["util_entropy_std"] = _stats(ent)
    return row


def ablate(grid: AblationGrid, base: TrainConfig, corpus: FeatureCorpus, labels, n_seeds: int = 3) -> list[dict]:
    grid.validate()
    return [run_cell(corpus, labels, base, p, K, n_seeds) for p, K in grid.cells]


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in rows:
        w.writerow([_fmt(r.get(col, "")) for col in SWEEP_HEADER])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.6g}"
    return v
