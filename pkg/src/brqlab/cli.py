"""``brqlab`` command line.

Subcommands: gen-corpus, pretrain, quantize, mask-stats, grad-check, probe,
ablate. Every subcommand takes --config, --seed and --out; outputs land
under --out with fixed names. Exit codes: 0 ok, 1 usage, 2 data/config,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .ablation import REPORT_GRID, TREND_GRID, AblationGrid, ablate, sweep_csv
from .checkpoint import load_checkpoint
from .config import TrainConfig, load_config
from .corpus import gen_synthetic_corpus, load_labels, load_manifest
from .errors import BrqError, CorruptFile, InvalidConfig
from .frontend import FeatureNormalizer, stack_frames, write_mel
from .masking import coverage_report
from .predictor import PredictorConfig, grad_check
from .prng import MASK64, Prng, derive_seed
from .probe import PROBE_HEADER, Upstream, run_probe
from .quantizer import codebook_utilization, format_target_line, init_quantizer, quantize
from .trainer import pretrain, prepare_features

log = logging.getLogger("brqlab")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value <= MASK64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _corpus(args, cfg: TrainConfig, out: Path):
    """Manifest from --manifest, else a synthetic corpus generated under out/corpus."""
    if getattr(args, "manifest", None):
        entries = load_manifest(args.manifest)
        labels_path = getattr(args, "labels", None) or Path(args.manifest).with_name("labels.jsonl")
        labels = load_labels(labels_path) if Path(labels_path).exists() else None
        return entries, labels
    c = cfg.corpus
    log.info("no --manifest; generating %d synthetic utterances", c.n_utts)
    return gen_synthetic_corpus(out / "corpus", c.n_utts, c.class_count, (c.min_duration_s, c.max_duration_s),
                                derive_seed(cfg.seed, "corpus"))


def cmd_gen_corpus(args, cfg, out):
    c = cfg.corpus
    entries, _ = gen_synthetic_corpus(out, args.n_utts or c.n_utts, args.classes or c.class_count,
                                      (c.min_duration_s, c.max_duration_s), cfg.seed)
    print(f"wrote {len(entries)} utterances to {out / 'manifest.jsonl'}")


def cmd_pretrain(args, cfg, out):
    if args.steps is not None:
        cfg = replace(cfg, steps=args.steps)
    entries, _ = _corpus(args, cfg, out)
    run = pretrain(entries, cfg, out)
    last = run.metrics[-1] if run.metrics else None
    if last:
        print(f"step {last['step']}: loss {last['loss']:.4f} masked_acc {last['masked_acc']:.4f}")
    print(f"codebook entropy {run.utilization.normalized_entropy:.4f}; artifacts in {out}")


def _quantizer_from_checkpoint(path):
    """Rebuild the quantizer from its seed; the stored float32 copy must agree."""
    header, tensors = load_checkpoint(path)
    cfg = TrainConfig.from_dict(header["config"])
    q = init_quantizer(cfg.quantizer_config())
    for name, arr in (("quantizer.projection", q.projection), ("quantizer.codebook", q.codebook)):
        if not np.allclose(tensors[name], arr, rtol=1e-6, atol=1e-7):
            raise CorruptFile(f"{path}: {name} does not match the quantizer rebuilt from the config seed")
    return q, FeatureNormalizer(tensors["normalizer.mean"], tensors["normalizer.std"]), cfg.stack


def cmd_quantize(args, cfg, out):
    entries, _ = _corpus(args, cfg, out)
    if args.checkpoint:
        q, normalizer, stack = _quantizer_from_checkpoint(args.checkpoint)
        corpus = prepare_features(entries, normalizer)
    else:
        q, stack = init_quantizer(cfg.quantizer_config()), cfg.stack
        corpus = prepare_features(entries)
    out.mkdir(parents=True, exist_ok=True)
    all_targets = []
    with open(out / "targets.txt", "w", encoding="utf-8", newline="\n") as fh:
        for uid, mel in zip(corpus.ids, corpus.mels):
            targets = quantize(q, stack_frames(mel, stack))
            all_targets.append(targets)
            fh.write(format_target_line(uid, targets))
            if args.mel_dir:
                Path(args.mel_dir).mkdir(parents=True, exist_ok=True)
                write_mel(Path(args.mel_dir) / f"{uid}.mel", mel)
    u = codebook_utilization(all_targets, q.config.codebook_size)
    print(f"{len(all_targets)} utterances; normalized entropy {u.normalized_entropy:.4f}, "
          f"{u.distinct_codes}/{q.config.codebook_size} codes used")


def cmd_mask_stats(args, cfg, out):
    probs = args.start_prob or [cfg.mask.start_prob]
    rows = []
    for i, p in enumerate(probs):
        policy = replace(cfg.mask, start_prob=p, span=args.span or cfg.mask.span)
        rows.append(coverage_report(policy, args.n_frames, Prng(derive_seed(cfg.seed, f"mask-stats/{i}"))))
    out.mkdir(parents=True, exist_ok=True)
    cols = ["start_prob", "span", "analytic_coverage", "empirical_coverage", "n_frames"]
    with open(out / "mask_stats.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    w = csv.DictWriter(sys.stdout, cols, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)


def cmd_grad_check(args, cfg, out):
    pcfg = PredictorConfig(input_dim=args.input_dim, hidden_dim=args.hidden_dim, codebook_size=args.codebook_size,
                           context_radius=args.context_radius)
    report = grad_check(pcfg, args.trials, args.eps, seq_len=args.seq_len, seed=cfg.seed)
    report = {k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in report.items()}
    report["per_tensor"] = {k: float(v) for k, v in report["per_tensor"].items()}
    report["passed"] = report["max_rel_error"] < args.tolerance
    text = json.dumps(report, indent=1, sort_keys=True)
    out.mkdir(parents=True, exist_ok=True)
    (out / "grad_check.json").write_text(text + "\n")
    print(text)
    if not report["passed"]:
        print(f"gradient check failed: {report['max_rel_error']:.3g} >= {args.tolerance}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_probe(args, cfg, out):
    entries, labels = _corpus(args, cfg, out)
    if labels is None:
        raise InvalidConfig("probe needs labels (--labels or labels.jsonl next to the manifest)")
    y = np.array([labels[e.id] for e in entries])
    if not args.checkpoint:
        raise InvalidConfig("probe needs at least one --checkpoint")
    upstreams = [Upstream.from_checkpoint(p) for p in args.checkpoint]
    seeds = [derive_seed(cfg.seed, f"probe/{i}") for i in range(args.seeds)]
    rows = []
    for up in upstreams:
        corpus = prepare_features(entries, up.normalizer)
        for s in seeds:
            rows.append(run_probe(up, corpus.mels, y, cfg.probe, s, name=Path(up.name).name))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "probe.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROBE_HEADER)
        w.writerows(r.row() for r in rows)
    for r in rows:
        print(",".join(str(v) for v in r.row()))


def cmd_ablate(args, cfg, out):
    if args.steps is not None:
        cfg = replace(cfg, steps=args.steps)
    entries, labels = _corpus(args, cfg, out)
    if labels is None:
        raise InvalidConfig("ablate needs labels for the probe column")
    if args.cell:
        cells = tuple((float(p), int(k)) for p, k in (c.split(":") for c in args.cell))
    else:
        cells = TREND_GRID if args.grid == "trend" else REPORT_GRID if args.grid == "report" else TREND_GRID + REPORT_GRID
    corpus = prepare_features(entries)
    y = np.array([labels[i] for i in corpus.ids])
    rows = ablate(AblationGrid(cells), cfg, corpus, y, n_seeds=args.seeds)
    out.mkdir(parents=True, exist_ok=True)
    text = sweep_csv(rows)
    (out / "sweep.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config mirroring TrainConfig")
    common.add_argument("--seed", type=_u64, help="base seed (unsigned 64-bit)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="brqlab", description="Random-projection quantizer pre-training lab")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-corpus", parents=[common], help="write a synthetic tone corpus")
    p.add_argument("--n-utts", type=int)
    p.add_argument("--classes", type=int)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("pretrain", parents=[common], help="masked-prediction pre-training")
    p.add_argument("--manifest")
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("quantize", parents=[common], help="dump quantizer targets")
    p.add_argument("--manifest")
    p.add_argument("--checkpoint", help="take quantizer and normalizer from this checkpoint")
    p.add_argument("--mel-dir", help="also write MEL80 feature dumps here")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("mask-stats", parents=[common], help="analytic vs empirical mask coverage")
    p.add_argument("--start-prob", type=float, action="append")
    p.add_argument("--span", type=int)
    p.add_argument("--n-frames", type=int, default=100_000)
    p.set_defaults(func=cmd_mask_stats)

    p = sub.add_parser("grad-check", parents=[common], help="finite-difference gradient check")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--input-dim", type=int, default=6)
    p.add_argument("--hidden-dim", type=int, default=4)
    p.add_argument("--codebook-size", type=int, default=5)
    p.add_argument("--context-radius", type=int, default=1)
    p.add_argument("--seq-len", type=int, default=3)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("probe", parents=[common], help="frozen linear probe on checkpoints")
    p.add_argument("--manifest")
    p.add_argument("--labels")
    p.add_argument("--checkpoint", action="append")
    p.add_argument("--seeds", type=int, default=3)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("ablate", parents=[common], help="masking ratio x codebook size sweep")
    p.add_argument("--manifest")
    p.add_argument("--labels")
    p.add_argument("--steps", type=int)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--grid", choices=["trend", "report", "all"], default="all")
    p.add_argument("--cell", action="append", help="custom cell START_PROB:CODEBOOK_SIZE (repeatable)")
    p.set_defaults(func=cmd_ablate)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("brqlab: error: a subcommand is required")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        code = args.func(args, cfg, Path(args.out))
        return EXIT_OK if code is None else code
    except BrqError as exc:
        print(f"brqlab {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"brqlab {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
