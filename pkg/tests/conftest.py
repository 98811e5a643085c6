import numpy as np
import pytest
from hypothesis import settings, strategies as st

from convexito import PLConvex, ProcessRecipe, TimeGrid, build_semimartingale

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

finite = st.floats(min_value=-5, max_value=5, allow_nan=False, allow_infinity=False)


@st.composite
def pl_functions(draw, max_dim=3, max_pieces=5):
    d = draw(st.integers(1, max_dim))
    k = draw(st.integers(1, max_pieces))
    alpha = draw(st.lists(finite, min_size=k, max_size=k))
    beta = draw(st.lists(st.lists(finite, min_size=d, max_size=d), min_size=k, max_size=k))
    return PLConvex.from_arrays(alpha, beta)


def random_pl(rng, k, d):
    return PLConvex.from_arrays(rng.normal(size=k), rng.normal(size=(k, d)))


@pytest.fixture
def abs_pl():
    return PLConvex([(0.0, -1.0), (0.0, 1.0)])


@pytest.fixture(scope="session")
def grid_1024():
    return TimeGrid.uniform(1024, 1.0)


@pytest.fixture(scope="session")
def bm_paths(grid_1024):
    """500 standard Brownian paths on a 1024-step grid."""
    return build_semimartingale(ProcessRecipe(), grid_1024, rng=11, n_paths=500)


@pytest.fixture(scope="session")
def bm_paths_offset(grid_1024):
    """Brownian paths started at 0.05 so no grid value is exactly 0."""
    return build_semimartingale(ProcessRecipe(x0=(0.05,)), grid_1024, rng=12, n_paths=500)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
