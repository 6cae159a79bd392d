import numpy as np
import pytest

from dgrec.graphs import hypergraph_from_incidence, normalized_adjacency
from dgrec.model import Batch, LocalModel, ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def four_item_fixture():
    """4 items / 2 tags hypergraph inside a 6-item vocabulary, 2 interests."""
    inc = [[1, 0], [1, 1], [0, 1], [1, 0]]
    hg = hypergraph_from_incidence(0, [0, 1, 2, 3], [0, 1], inc, own_items=[0, 1, 2])
    batch = Batch([0, 1, 2], [4, 5, 3])
    cfg = ModelConfig(n_items=6, d=4, d_i=3, n_i=2, h=5, lam=0.01)
    return hg, normalized_adjacency(hg), batch, cfg


def make_model(cfg, seed, scale=1.0):
    m = LocalModel.init(cfg, np.random.default_rng(seed))
    m.theta *= scale
    return m


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one pass/fail line per acceptance criterion."""

    def _report(label: str, ok: bool, detail: str) -> None:
        line = f"{label}: {'PASS' if ok else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
