import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from hyperricci import Hypergraph

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_hypergraph(rng, n_range=(4, 30), m_range=(2, 30), max_size=6) -> Hypergraph:
    """Random hypergraph; uncovered nodes are attached with an extra pair edge."""
    n = int(rng.integers(*n_range))
    m = int(rng.integers(*m_range))
    edges = []
    for _ in range(m):
        k = int(rng.integers(2, min(n, max_size) + 1))
        edges.append([int(v) for v in rng.choice(n, size=k, replace=False)])
    covered = {v for e in edges for v in e}
    for v in range(n):
        if v not in covered:
            edges.append([v, (v + 1) % n])
    return Hypergraph(n, edges)


def unit_rows(rng, n, d):
    X = rng.standard_normal((n, d))
    return X / np.linalg.norm(X, axis=1)[:, None]


@st.composite
def hypergraphs(draw, max_n=12, max_m=10, max_size=5):
    n = draw(st.integers(3, max_n))
    m = draw(st.integers(1, max_m))
    edges = []
    for _ in range(m):
        size = draw(st.integers(2, min(max_size, n)))
        edges.append(draw(st.lists(st.integers(0, n - 1), min_size=size, max_size=size, unique=True)))
    covered = {v for e in edges for v in e}
    for v in range(n):
        if v not in covered:
            edges.append([v, (v + 1) % n])
    return Hypergraph(n, edges)


@st.composite
def hypergraph_with_features(draw, d=3, **kw):
    h = draw(hypergraphs(**kw))
    seed = draw(st.integers(0, 2**31 - 1))
    return h, unit_rows(np.random.default_rng(seed), h.n, d)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy():
    # three edges, mixed sizes, one shared node per overlap
    return Hypergraph(5, [[0, 1, 2], [2, 3], [3, 4, 0]])


# one PASS/FAIL line per acceptance criterion in the terminal summary
_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.skipped or (rep.when != "call" and rep.passed):
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    _CRITERIA[marker.args[0]] = ("PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
