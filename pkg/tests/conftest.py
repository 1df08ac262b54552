import numpy as np
import pytest

from iflg.graph import Graph, SbmSpec, adjacency_from_edges, sbm_generate


def graph_from_edges(edges, n, features=None, labels=None, num_classes=None):
    if features is None:
        features = np.eye(n, max(n, 2))
    if labels is not None and num_classes is None:
        num_classes = int(np.max(labels)) + 1
    return Graph(np.asarray(features, dtype=float), adjacency_from_edges(np.asarray(edges).reshape(-1, 2), n),
                 None if labels is None else np.asarray(labels), num_classes)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def sbm40():
    return sbm_generate(SbmSpec((20, 20), 0.5, 0.05, 16, seed=3))


# one summary line per acceptance criterion, printed at the end of the run
CRITERIA: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[k])
