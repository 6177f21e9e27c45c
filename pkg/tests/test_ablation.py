from dataclasses import replace

import numpy as np
import pytest

from brqlab import ablation
from brqlab.ablation import SWEEP_HEADER, AblationGrid, ablate, cell_seed, sweep_csv
from brqlab.config import ProbeConfig, desk_config
from brqlab.errors import InvalidGrid, NonFiniteGradient
from brqlab.trainer import prepare_features


@pytest.fixture(scope="module")
def tiny(small_corpus):
    _, entries, labels = small_corpus
    corpus = prepare_features(entries)
    y = np.array([labels[i] for i in corpus.ids])
    base = replace(desk_config(steps=2, seed=9), probe=ProbeConfig(steps=10))
    return corpus, y, base


def test_grid_validation():
    with pytest.raises(InvalidGrid):
        AblationGrid(()).validate()
    with pytest.raises(InvalidGrid):
        AblationGrid(((1.5, 64),)).validate()
    AblationGrid(ablation.REPORT_GRID).validate()
    assert {K for _, K in ablation.REPORT_GRID} == {1024, 8192}
    assert {p for p, _ in ablation.REPORT_GRID} == {0.01, 0.05, 0.10, 0.12}


def test_cell_seed_depends_only_on_cell():
    assert cell_seed(1, 0.1, 64) == cell_seed(1, 0.1, 64)
    assert len({cell_seed(1, 0.1, 64), cell_seed(1, 0.01, 64), cell_seed(1, 0.1, 128), cell_seed(2, 0.1, 64)}) == 4


def test_order_independence(tiny):
    corpus, y, base = tiny
    cells = ((0.05, 8), (0.2, 16))
    fwd = ablate(AblationGrid(cells), base, corpus, y, n_seeds=2)
    rev = ablate(AblationGrid(cells[::-1]), base, corpus, y, n_seeds=2)
    assert fwd == rev[::-1]
    assert all(r["status"] == "ok" for r in fwd)


def test_failed_cell_is_isolated(tiny, monkeypatch):
    corpus, y, base = tiny
    clean = ablate(AblationGrid(((0.05, 8),)), base, corpus, y, n_seeds=1)
    real = ablation.pretrain

    def flaky(corpus, cfg, *a, **kw):
        if cfg.quantizer.codebook_size == 16:
            raise NonFiniteGradient("boom")
        return real(corpus, cfg, *a, **kw)

    monkeypatch.setattr(ablation, "pretrain", flaky)
    rows = ablate(AblationGrid(((0.2, 16), (0.05, 8))), base, corpus, y, n_seeds=1)
    assert rows[0]["status"] == "failed: NonFiniteGradient"
    assert rows[1] == clean[0]


def test_sweep_csv_columns(tiny):
    corpus, y, base = tiny
    rows = ablate(AblationGrid(((0.1, 8),)), base, corpus, y, n_seeds=2)
    lines = sweep_csv(rows).splitlines()
    assert lines[0].split(",") == SWEEP_HEADER
    row = dict(zip(SWEEP_HEADER, lines[1].split(",")))
    assert float(row["coverage_overlap"]) == pytest.approx(1 - 0.9 ** 4)
    assert float(row["coverage_nominal"]) == pytest.approx(0.4)
    assert 0.0 <= float(row["util_entropy_mean"]) <= 1.0
