import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from brqlab.checkpoint import decode, encode, load_checkpoint, save_checkpoint
from brqlab.config import TrainConfig, desk_config, load_config
from brqlab.corpus import class_band, dynamic_batches, gen_synthetic_corpus, load_labels, load_manifest
from brqlab.errors import (
    CorruptFile, EmptyManifest, EmptyMask, InvalidConfig, InvalidRange, NonFiniteGradient, UnsupportedFormat,
)
from brqlab.frontend import load_wav, log_mel_spectrogram, stack_frames
from brqlab.optim import AdamState, adam_step, lr_at
from brqlab.predictor import PredictorConfig, backward, forward, init_predictor
from brqlab.prng import Prng
from brqlab.quantizer import init_quantizer, quantize
from brqlab.trainer import make_batch, masked_accuracy, prepare_features, pretrain

from oracles import ReferenceAdam


# -- batching -----------------------------------------------------------------

def test_greedy_batches_identity_order():
    batches, warns = dynamic_batches([40, 50, 30], 100)
    assert batches == [[0, 1], [2]] and warns == []


def test_oversize_singleton():
    batches, warns = dynamic_batches([120], 100)
    assert batches == [[0]] and len(warns) == 1


def test_batching_errors():
    with pytest.raises(EmptyManifest):
        dynamic_batches([], 100)
    with pytest.raises(InvalidRange):
        dynamic_batches([1.0, 0.0], 100)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.1, 150.0), min_size=1, max_size=60), st.floats(5.0, 120.0), st.integers(0, 2**32))
def test_batches_partition_and_respect_cap(durs, cap, seed):
    batches, _ = dynamic_batches(durs, cap, Prng(seed))
    flat = sorted(i for b in batches for i in b)
    assert flat == list(range(len(durs)))
    for b in batches:
        assert len(b) == 1 or sum(durs[i] for i in b) <= cap


# -- schedule and optimizer ------------------------------------------------------

def test_lr_schedule():
    assert lr_at(0, 0.0008, 1000) == 0.0
    assert lr_at(500, 0.0008, 1000) == pytest.approx(0.0004)
    assert lr_at(1000, 0.0008, 1000) == 0.0008
    assert lr_at(2000, 0.0008, 1000) == 0.0008


def test_adam_first_step_sign(rng):
    p = {"w": rng.normal(size=(4, 3))}
    g = {"w": rng.normal(size=(4, 3))}
    before = p["w"].copy()
    adam_step(p, g, AdamState(), 0.01)
    np.testing.assert_allclose(p["w"] - before, -0.01 * np.sign(g["w"]), atol=0.01 * 1e-6)


def test_adam_zero_gradient_fixed_point(rng):
    p = {"w": rng.normal(size=5)}
    before = p["w"].copy()
    state = AdamState()
    adam_step(p, {"w": np.zeros(5)}, state, 0.1)
    assert np.array_equal(p["w"], before) and state.step == 1


def test_adam_non_finite_leaves_state_alone(rng):
    p = {"a": rng.normal(size=3), "b": rng.normal(size=2)}
    before = {k: v.copy() for k, v in p.items()}
    state = AdamState()
    with pytest.raises(NonFiniteGradient):
        adam_step(p, {"a": np.ones(3), "b": np.array([1.0, np.nan])}, state, 0.1)
    assert state.step == 0 and not state.m
    assert all(np.array_equal(p[k], before[k]) for k in p)


def test_adam_matches_reference_for_100_steps(rng):
    cfg = PredictorConfig(input_dim=6, hidden_dim=4, codebook_size=5)
    params = init_predictor(cfg)
    ref_params = {k: v.copy() for k, v in params.items()}
    state, ref = AdamState(), ReferenceAdam()
    for step in range(1, 101):
        feats = rng.normal(size=(3, 6))
        targets, mask = rng.integers(0, 5, 3), np.array([True, rng.random() < 0.5, True])
        grads = backward(params, forward(params, feats, 1), targets, mask)
        lr = lr_at(step, 0.0008, 10)
        adam_step(params, grads, state, lr)
        ref_params = ref.step(ref_params, grads, lr)
        for k in params:
            np.testing.assert_allclose(params[k], ref_params[k], rtol=1e-10, atol=0)


# -- checkpoints ---------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path, rng):
    tensors = {"b": rng.normal(size=(3, 2)), "a": rng.normal(size=4)}
    save_checkpoint(tmp_path / "c.brq", tensors, {"step": 3})
    header, back = load_checkpoint(tmp_path / "c.brq")
    assert header["step"] == 3 and list(back) == ["b", "a"]
    for k in tensors:
        assert np.array_equal(back[k], tensors[k].astype(np.float32))
    assert not list(tmp_path.glob(".tmp-*"))


def test_checkpoint_corruption(rng):
    blob = encode({"w": rng.normal(size=10)}, {})
    with pytest.raises(CorruptFile):
        decode(blob[:-8])
    with pytest.raises(UnsupportedFormat):
        decode(b"XXXX" + blob[4:])


# -- config --------------------------------------------------------------------

def test_config_json(tmp_path):
    (tmp_path / "c.json").write_text('{"seed": 5, "steps": 7, "quantizer": {"codebook_size": 32}}')
    cfg = load_config(tmp_path / "c.json")
    assert cfg.seed == 5 and cfg.steps == 7 and cfg.predictor.codebook_size == 32
    (tmp_path / "bad.json").write_text('{"stepz": 1}')
    with pytest.raises(InvalidConfig):
        load_config(tmp_path / "bad.json")


def test_config_roundtrip():
    cfg = desk_config(seed=3)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


# -- corpus --------------------------------------------------------------------

def test_corpus_errors(tmp_path):
    with pytest.raises(InvalidRange):
        gen_synthetic_corpus(tmp_path, n_utts=0)
    with pytest.raises(InvalidRange):
        gen_synthetic_corpus(tmp_path, n_utts=3, class_count=1)


def test_corpus_deterministic(tmp_path):
    gen_synthetic_corpus(tmp_path / "a", 4, 2, (0.5, 0.7), seed=8)
    gen_synthetic_corpus(tmp_path / "b", 4, 2, (0.5, 0.7), seed=8)
    for name in ("manifest.jsonl", "labels.jsonl", "wavs/utt00003.wav"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_manifest_and_labels(small_corpus):
    out, entries, labels = small_corpus
    again = load_manifest(out / "manifest.jsonl")
    assert [e.id for e in again] == [e.id for e in entries]
    assert load_labels(out / "labels.jsonl") == labels
    for e in entries:
        assert 1.0 <= e.duration_s <= 1.5
        assert abs(np.abs(load_wav(e.path).samples).max() - 0.5) < 0.05


def test_class_bands_separate_in_mel_space(tmp_path):
    entries, labels = gen_synthetic_corpus(tmp_path, 8, 4, (2.0, 2.0), seed=21)
    dom = {0: [], 3: []}
    for e in entries:
        if labels[e.id] in dom:
            dom[labels[e.id]].append(np.argmax(log_mel_spectrogram(load_wav(e.path)), axis=1))
    a, b = np.concatenate(dom[0]), np.concatenate(dom[3])
    n = min(a.size, b.size)
    assert np.mean(a[:n] != b[:n]) >= 0.95
    assert class_band(3) == (1500, 1800)


# -- training ------------------------------------------------------------------

def test_masked_accuracy_cases(rng):
    logits = np.zeros((5, 4))
    assert masked_accuracy(logits, [0, 1, 0, 2, 0], np.ones(5, bool)) == 0.6
    t = rng.integers(0, 4, 10_000)
    assert masked_accuracy(np.eye(4)[t], t, np.ones(t.size, bool)) == 1.0
    acc = masked_accuracy(rng.normal(size=(10_000, 4)), t, np.ones(t.size, bool))
    assert abs(acc - 0.25) <= 0.02
    with pytest.raises(EmptyMask):
        masked_accuracy(logits, [0] * 5, np.zeros(5, bool))


def test_targets_come_from_clean_features(small_corpus):
    _, entries, _ = small_corpus
    cfg = desk_config(seed=2)
    corpus = prepare_features(entries)
    q = init_quantizer(cfg.quantizer_config())
    batch = make_batch(corpus, [0, 1, 2], q, cfg, Prng(1), Prng(2))
    clean = np.concatenate([stack_frames(corpus.mels[i], 4) for i in (0, 1, 2)])
    assert np.array_equal(batch.targets, quantize(q, clean))
    assert any(not np.array_equal(m, c) for m, c in zip(batch.masked, batch.clean))


def test_zero_step_run(tmp_path, small_corpus):
    _, entries, _ = small_corpus
    run = pretrain(entries, desk_config(steps=0), tmp_path)
    assert run.metrics == []
    assert [p.name for p in run.checkpoints] == ["step_0.brq"]
    assert (tmp_path / "metrics.csv").read_text().strip().count("\n") == 0


def test_short_run_is_deterministic(tmp_path, small_corpus):
    _, entries, _ = small_corpus
    cfg = desk_config(steps=4, seed=11)
    pretrain(entries, cfg, tmp_path / "a")
    pretrain(entries, cfg, tmp_path / "b")
    for rel in ("metrics.csv", "checkpoints/step_0.brq", "checkpoints/step_2.brq", "checkpoints/step_4.brq"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_run_metrics_and_checkpoint_contents(tmp_path, small_corpus):
    _, entries, _ = small_corpus
    cfg = desk_config(steps=3, seed=1, checkpoint_every=1)
    run = pretrain(entries, cfg, tmp_path)
    assert [r["step"] for r in run.metrics] == [1, 2, 3]
    assert run.metrics[0]["lr"] == pytest.approx(0.0008 / 30)
    assert abs(run.metrics[0]["loss"] - math.log(64)) < 0.05 * math.log(64)
    header, tensors = load_checkpoint(tmp_path / "checkpoints" / "step_3.brq")
    assert header["step"] == 3
    np.testing.assert_allclose(tensors["W1"], run.params["W1"], rtol=1e-6, atol=1e-7)
    assert TrainConfig.from_dict(header["config"]) == cfg
    header_line = (tmp_path / "metrics.csv").read_text().splitlines()[0]
    assert header_line == "step,lr,loss,masked_acc,util_entropy,ms_per_step,skipped_batches"


def test_invalid_training_config(small_corpus):
    _, entries, _ = small_corpus
    with pytest.raises(InvalidConfig):
        pretrain(entries, replace(desk_config(), stack=3))
