"""Deterministic masked-prediction pre-training loop.

Per step: draw the next duration-capped batch, stack the clean normalized
Mel frames, quantize them into targets, sample span masks, fill masked Mel
rows with noise, stack again, run the predictor, and take one Adam step on
the masked cross-entropy.

Random streams (batch order, mask starts, infill noise, init) are separate
sub-seeds of ``TrainConfig.seed``, so a run is a pure function of its config
and corpus.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .config import TrainConfig
from .corpus import ManifestEntry, dynamic_batches
from .errors import EmptyMask
from .frontend import FeatureNormalizer, load_wav, log_mel_spectrogram, stack_frames
from .masking import apply_mask, reduce_mask, sample_mask
from .optim import AdamState, adam_step, lr_at
from .predictor import PARAM_NAMES, backward, forward, init_predictor, masked_ce_loss
from .prng import Prng, derive_seed
from .quantizer import Quantizer, UtilizationStats, codebook_utilization, init_quantizer, quantize

log = logging.getLogger(__name__)

METRICS_HEADER = ["step", "lr", "loss", "masked_acc", "util_entropy", "ms_per_step", "skipped_batches"]


@dataclass
class FeatureCorpus:
    """Normalized log-Mel frames for every utterance of a manifest."""

    ids: list
    mels: list
    durations: list
    normalizer: FeatureNormalizer

    def __len__(self):
        return len(self.ids)


def prepare_features(entries: list[ManifestEntry], normalizer: FeatureNormalizer | None = None) -> FeatureCorpus:
    raw = [log_mel_spectrogram(load_wav(e.path)) for e in entries]
    if normalizer is None:
        normalizer = FeatureNormalizer.fit(raw)
    return FeatureCorpus([e.id for e in entries], [normalizer(m) for m in raw],
                         [e.duration_s for e in entries], normalizer)


def masked_accuracy(logits: np.ndarray, targets, loss_mask) -> float:
    rows = np.flatnonzero(np.asarray(loss_mask, dtype=bool))
    if rows.size == 0:
        raise EmptyMask("no masked positions")
    pred = np.argmax(logits[rows], axis=1)
    return float(np.mean(pred == np.asarray(targets)[rows]))


@dataclass
class Batch:
    clean: list  # stacked clean features per utterance
    masked: list  # stacked masked features per utterance
    targets: np.ndarray
    loss_mask: np.ndarray


def make_batch(corpus: FeatureCorpus, idxs, quantizer: Quantizer, config: TrainConfig,
               mask_rng: Prng, noise_rng: Prng) -> Batch:
    clean, masked, loss_mask = [], [], []
    for i in idxs:
        mel = corpus.mels[i]
        clean.append(stack_frames(mel, config.stack))
        spec = sample_mask(mel.shape[0], config.mask, mask_rng)
        masked.append(stack_frames(apply_mask(mel, spec, config.mask, noise_rng), config.stack))
        loss_mask.append(reduce_mask(spec, config.stack))
    targets = quantize(quantizer, np.concatenate(clean))
    return Batch(clean, masked, targets, np.concatenate(loss_mask))


def checkpoint_tensors(params: dict, quantizer: Quantizer, normalizer: FeatureNormalizer) -> dict:
    tensors = {name: params[name] for name in PARAM_NAMES}
    tensors["quantizer.projection"] = quantizer.projection
    tensors["quantizer.codebook"] = quantizer.codebook
    tensors["normalizer.mean"] = normalizer.mean
    tensors["normalizer.std"] = normalizer.std
    return tensors


def checkpoint_steps(config: TrainConfig) -> set:
    steps = {0, config.steps}
    if config.steps >= 2:
        steps.add(config.steps // 2)
    if config.checkpoint_every:
        steps.update(range(config.checkpoint_every, config.steps + 1, config.checkpoint_every))
    return steps


@dataclass
class RunArtifacts:
    config: TrainConfig
    params: dict
    quantizer: Quantizer
    normalizer: FeatureNormalizer
    metrics: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    timings: list = field(default_factory=list)  # (quantize+mask ms, forward+backward ms)
    warnings: list = field(default_factory=list)
    skipped_batches: int = 0
    utilization: UtilizationStats | None = None
    out_dir: Path | None = None

    def final(self, key: str) -> float:
        """Mean of ``key`` over the last ``final_window`` logged steps."""
        rows = self.metrics[-self.config.final_window:]
        return float(np.mean([r[key] for r in rows])) if rows else float("nan")


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in rows:
        w.writerow([r["step"], f"{r['lr']:.10g}", f"{r['loss']:.10g}", f"{r['masked_acc']:.10g}",
                    f"{r['util_entropy']:.10g}", f"{r['ms_per_step']:.3f}", r["skipped_batches"]])
    return buf.getvalue()


def pretrain(corpus, config: TrainConfig, out_dir=None) -> RunArtifacts:
    """Run ``config.steps`` optimizer steps over ``corpus``.

    ``corpus`` is a manifest entry list or a prepared :class:`FeatureCorpus`.
    With ``out_dir`` set, writes metrics.csv, timing.csv, utilization.json
    and checkpoints/step_N.brq (initial, midpoint, final, every N). In
    deterministic mode the ms_per_step column is 0 and wall-clock numbers
    only go to timing.csv.
    """
    config.validate()
    if not isinstance(corpus, FeatureCorpus):
        corpus = prepare_features(corpus)
    quantizer = init_quantizer(config.quantizer_config())
    params = init_predictor(config.predictor_config())
    K, radius = config.quantizer.codebook_size, config.predictor.context_radius
    out = Path(out_dir) if out_dir is not None else None
    run = RunArtifacts(config, params, quantizer, corpus.normalizer, out_dir=out)
    ckpt_at = checkpoint_steps(config)

    def save(step):
        if out is None:
            return
        meta = {"format": "BRQ1", "step": step, "config": config.to_dict()}
        path = save_checkpoint(out / "checkpoints" / f"step_{step}.brq",
                               checkpoint_tensors(params, quantizer, corpus.normalizer), meta)
        run.checkpoints.append(path)

    save(0)
    batch_rng = Prng(derive_seed(config.seed, "batching"))
    mask_rng = Prng(derive_seed(config.seed, "mask"))
    noise_rng = Prng(derive_seed(config.seed, "noise"))
    adam = AdamState()
    step = 0
    while step < config.steps:
        batches, warns = dynamic_batches(corpus.durations, config.max_batch_seconds, batch_rng)
        run.warnings.extend(warns)
        for idxs in batches:
            if step >= config.steps:
                break
            t0 = time.perf_counter()
            batch = make_batch(corpus, idxs, quantizer, config, mask_rng, noise_rng)
            t1 = time.perf_counter()
            if not batch.loss_mask.any():
                run.skipped_batches += 1
                log.info("batch with no masked frames skipped")
                continue
            step += 1
            acts = forward(params, batch.masked, radius)
            loss, _ = masked_ce_loss(acts.logits, batch.targets, batch.loss_mask)
            grads = backward(params, acts, batch.targets, batch.loss_mask)
            t2 = time.perf_counter()
            acc = masked_accuracy(acts.logits, batch.targets, batch.loss_mask)
            lr = lr_at(step, config.peak_lr, config.warmup_steps)
            adam_step(params, grads, adam, lr)
            t3 = time.perf_counter()
            run.timings.append((1e3 * (t1 - t0), 1e3 * (t2 - t1)))
            run.metrics.append({
                "step": step, "lr": lr, "loss": loss, "masked_acc": acc,
                "util_entropy": codebook_utilization(batch.targets, K).normalized_entropy,
                "ms_per_step": 0.0 if config.deterministic else 1e3 * (t3 - t0),
                "skipped_batches": run.skipped_batches,
            })
            if step in ckpt_at:
                save(step)
    run.utilization = codebook_utilization(
        [quantize(quantizer, stack_frames(m, config.stack)) for m in corpus.mels], K)
    if out is not None:
        write_run_files(run, out)
    return run


def write_run_files(run: RunArtifacts, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_csv(run.metrics), encoding="utf-8")
    with open(out / "timing.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "quantize_mask_ms", "forward_backward_ms"])
        for row, (qm, fb) in zip(run.metrics, run.timings):
            w.writerow([row["step"], f"{qm:.3f}", f"{fb:.3f}"])
    u = run.utilization
    (out / "utilization.json").write_text(json.dumps({
        "codebook_size": int(u.histogram.size), "normalized_entropy": u.normalized_entropy,
        "distinct_codes": u.distinct_codes, "histogram": u.histogram.tolist(),
        "skipped_batches": run.skipped_batches, "warnings": run.warnings,
    }, indent=1) + "\n", encoding="utf-8")
