import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from tilespmv.matrix import CooMatrix

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@st.composite
def coo_matrices(draw, max_rows=40, max_cols=40, max_nnz=200, square=False):
    """Random canonical COO matrices with values in [-1, 1]."""
    nr = draw(st.integers(1, max_rows))
    nc = nr if square else draw(st.integers(1, max_cols))
    nnz = draw(st.integers(0, min(max_nnz, nr * nc)))
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    keys = rng.choice(nr * nc, size=nnz, replace=False)
    vals = rng.uniform(-1, 1, nnz)
    return CooMatrix.from_entries(nr, nc, keys // nc, keys % nc, vals)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def figure1_matrix():
    """8 x 8 matrix built to the worked tiling example.

    Four columns have >= 2 entries (6, 6, 2, 2) and four have exactly one.
    Original column order is shuffled so the column sort matters. With
    tile_width=2 the dense part splits into 2 tiles; tile 0 holds rows 0-3
    with 2 entries each and rows 4-7 with one entry each.
    """
    A, B, C, D, E, F, G, H = 1, 4, 2, 6, 0, 3, 5, 7   # original column of each role
    entries = []
    for r in range(4):
        entries += [(r, A), (r, B)]
    entries += [(4, A), (5, A), (6, B), (7, B)]
    entries += [(0, C), (1, C), (2, D), (3, D)]
    entries += [(4, E), (5, F), (6, G), (7, H)]
    rows, cols = zip(*entries)
    vals = np.arange(1, len(entries) + 1, dtype=np.float64)
    return CooMatrix.from_entries(8, 8, rows, cols, vals)


# one PASS/FAIL line per acceptance criterion, shown at the end of every run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
