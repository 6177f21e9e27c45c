import numpy as np
import pytest

from brqlab.corpus import gen_synthetic_corpus


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Twelve short utterances, enough for a few training steps."""
    out = tmp_path_factory.mktemp("small_corpus")
    entries, labels = gen_synthetic_corpus(out, n_utts=12, class_count=4, duration_range_s=(1.0, 1.5), seed=3)
    return out, entries, labels


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance_report(request):
    """Call with (criterion, passed, detail); prints a PASS/FAIL line and keeps it for the summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def record(criterion, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}"
        lines.append(line)
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
