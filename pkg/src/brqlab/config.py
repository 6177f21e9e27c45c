"""Run configuration and its JSON form.

The JSON document mirrors the dataclass field names, with nested objects for
``mask``, ``quantizer``, ``predictor``, ``corpus`` and ``probe``. Quantizer
and predictor seeds are always derived from the top-level ``seed``.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import InvalidConfig
from .masking import MaskPolicy
from .predictor import PredictorConfig
from .prng import MASK64, derive_seed
from .quantizer import QuantizerConfig


@dataclass(frozen=True)
class CorpusConfig:
    n_utts: int = 200
    class_count: int = 4
    min_duration_s: float = 2.0
    max_duration_s: float = 4.0


@dataclass(frozen=True)
class ProbeConfig:
    lr: float = 0.5
    steps: int = 500
    test_fraction: float = 0.25


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    peak_lr: float = 0.0008
    warmup_steps: int = 1000
    max_batch_seconds: float = 100.0
    steps: int = 300
    checkpoint_every: int = 0
    stack: int = 4
    final_window: int = 10
    deterministic: bool = True
    mask: MaskPolicy = field(default_factory=MaskPolicy)
    quantizer: QuantizerConfig = field(default_factory=lambda: QuantizerConfig(codebook_size=64))
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)

    def validate(self) -> None:
        if not self.peak_lr > 0:
            raise InvalidConfig("peak_lr must be > 0")
        if not self.max_batch_seconds > 0:
            raise InvalidConfig("max_batch_seconds must be > 0")
        if self.steps < 0 or self.warmup_steps < 0 or self.checkpoint_every < 0:
            raise InvalidConfig("steps, warmup_steps and checkpoint_every must be >= 0")
        if self.stack < 1 or self.final_window < 1:
            raise InvalidConfig("stack and final_window must be >= 1")
        if not 0 <= self.seed <= MASK64:
            raise InvalidConfig("seed must be an unsigned 64-bit integer")
        self.mask.validate()
        self.quantizer.validate()
        self.predictor.validate()
        if self.quantizer.input_dim != 80 * self.stack or self.predictor.input_dim != self.quantizer.input_dim:
            raise InvalidConfig("quantizer/predictor input_dim must equal 80 * stack")
        if self.predictor.codebook_size != self.quantizer.codebook_size:
            raise InvalidConfig("predictor and quantizer codebook sizes differ")
        if self.quantizer.codebook_size < 2:
            raise InvalidConfig("training needs codebook_size >= 2")

    def quantizer_config(self) -> QuantizerConfig:
        return replace(self.quantizer, seed=derive_seed(self.seed, "quantizer"))

    def predictor_config(self) -> PredictorConfig:
        return replace(self.predictor, seed=derive_seed(self.seed, "predictor"))

    def with_codebook(self, K: int) -> "TrainConfig":
        return replace(self, quantizer=replace(self.quantizer, codebook_size=K),
                       predictor=replace(self.predictor, codebook_size=K))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        nested = {"mask": MaskPolicy, "quantizer": QuantizerConfig, "predictor": PredictorConfig,
                  "corpus": CorpusConfig, "probe": ProbeConfig}
        base = cls()
        kwargs = {}
        for key, value in data.items():
            if key not in {f.name for f in dataclasses.fields(cls)}:
                raise InvalidConfig(f"unknown config key {key!r}")
            if key in nested:
                if not isinstance(value, dict):
                    raise InvalidConfig(f"{key!r} must be an object")
                try:
                    kwargs[key] = replace(getattr(base, key), **value)
                except TypeError as exc:
                    raise InvalidConfig(f"{key}: {exc}") from exc
            else:
                kwargs[key] = value
        cfg = replace(base, **kwargs)
        # fill predictor dims from the quantizer unless given explicitly
        pred = data.get("predictor", {})
        stack = cfg.stack
        q = cfg.quantizer if "input_dim" in data.get("quantizer", {}) else replace(cfg.quantizer, input_dim=80 * stack)
        p = replace(cfg.predictor,
                    input_dim=pred.get("input_dim", q.input_dim),
                    codebook_size=pred.get("codebook_size", q.codebook_size))
        cfg = replace(cfg, quantizer=q, predictor=p)
        cfg.validate()
        return cfg


def load_config(path) -> TrainConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise InvalidConfig(f"{path}: top level must be an object")
    return TrainConfig.from_dict(data)


def desk_config(**overrides) -> TrainConfig:
    """Small-budget configuration used by the sanity run and tests."""
    base = TrainConfig(warmup_steps=30)
    return replace(base, **overrides)
