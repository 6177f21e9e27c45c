import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from brqlab.errors import InvalidConfig, LengthMismatch
from brqlab.masking import (
    MaskPolicy, MaskSpec, apply_mask, coverage_report, expected_coverage, reduce_mask,
    sample_mask, spans_to_covered,
)
from brqlab.prng import Prng


def _covered_by_loop(starts, T, span):
    out = [False] * T
    for s in starts:
        for t in range(s, min(s + span, T)):
            out[t] = True
    return np.array(out)


def test_zero_and_full_probability():
    assert not sample_mask(500, MaskPolicy(start_prob=0.0), Prng(1)).covered.any()
    m = sample_mask(500, MaskPolicy(start_prob=1.0), Prng(1))
    assert m.covered.all() and len(m.starts) == 500


def test_closed_forms():
    assert expected_coverage(MaskPolicy(0.15, 4)) == pytest.approx(0.47799375, abs=1e-12)
    assert expected_coverage(MaskPolicy(0.01, 4)) == pytest.approx(0.03940399, abs=1e-12)
    assert expected_coverage(MaskPolicy(0.37, 1)) == 0.37


@pytest.mark.parametrize("p,tol", [(0.15, 0.01), (0.01, 0.005), (0.05, 0.01)])
def test_empirical_coverage(p, tol):
    policy = MaskPolicy(start_prob=p, span=4)
    m = sample_mask(100_000, policy, Prng(17))
    assert abs(m.interior_coverage() - expected_coverage(policy)) <= tol


def test_spans_clipped_at_end():
    assert spans_to_covered(np.array([8]), 10, 4).tolist() == [False] * 8 + [True, True]


def test_invalid_policy():
    with pytest.raises(InvalidConfig):
        sample_mask(10, MaskPolicy(start_prob=1.5), Prng(0))
    with pytest.raises(InvalidConfig):
        sample_mask(10, MaskPolicy(span=0), Prng(0))
    with pytest.raises(InvalidConfig):
        sample_mask(0, MaskPolicy(), Prng(0))


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 400), st.floats(0.0, 1.0), st.integers(1, 8), st.integers(0, 2**32))
def test_covered_consistent_with_starts(T, p, span, seed):
    m = sample_mask(T, MaskPolicy(start_prob=p, span=span), Prng(seed))
    assert np.array_equal(m.covered, _covered_by_loop(m.starts.tolist(), T, span))
    assert np.all(np.diff(m.starts) > 0)


def test_apply_empty_mask_is_identity(rng):
    mel = rng.normal(size=(20, 80))
    spec = MaskSpec(np.zeros(20, bool), np.zeros(0, np.int64), 4)
    out = apply_mask(mel, spec, MaskPolicy(), Prng(0))
    assert np.array_equal(out, mel) and out is not mel


def test_apply_zero_std_fills_mean(rng):
    mel = rng.normal(size=(20, 80))
    spec = MaskSpec(spans_to_covered(np.array([3]), 20, 4), np.array([3]), 4)
    out = apply_mask(mel, spec, MaskPolicy(noise_std=0.0, noise_mean=0.25), Prng(0))
    assert np.all(out[3:7] == 0.25)
    assert np.array_equal(out[:3], mel[:3]) and np.array_equal(out[7:], mel[7:])


def test_apply_full_mask_noise_std():
    T = 1300  # 104000 entries
    spec = sample_mask(T, MaskPolicy(start_prob=1.0), Prng(0))
    out = apply_mask(np.zeros((T, 80)), spec, MaskPolicy(), Prng(5))
    assert abs(out.std() - 0.1) <= 0.005


def test_apply_length_mismatch():
    spec = sample_mask(10, MaskPolicy(), Prng(0))
    with pytest.raises(LengthMismatch):
        apply_mask(np.zeros((11, 80)), spec, MaskPolicy(), Prng(0))


def test_reduce_mask_cases():
    assert not reduce_mask(np.zeros(12, bool), 4).any()
    one = np.zeros(12, bool)
    one[5] = True
    assert reduce_mask(one, 4).tolist() == [False, True, False]
    tail = np.zeros(10, bool)
    tail[9] = True
    assert reduce_mask(tail, 4).tolist() == [False, False]


@settings(max_examples=60, deadline=None)
@given(st.integers(4, 300), st.floats(0.0, 0.5), st.integers(0, 2**32))
def test_reduced_coverage_not_smaller(T, p, seed):
    m = sample_mask(T, MaskPolicy(start_prob=p), Prng(seed))
    n = T // 4
    reduced = reduce_mask(m, 4)
    assert reduced.shape == (n,)
    assert reduced.mean() >= m.covered[: 4 * n].mean() - 1e-12


def test_coverage_report_row():
    row = coverage_report(MaskPolicy(0.15, 4), 100_000, Prng(1))
    assert set(row) == {"start_prob", "span", "analytic_coverage", "empirical_coverage", "n_frames"}
    assert abs(row["empirical_coverage"] - row["analytic_coverage"]) < 0.01
