import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import coo_matrices
from tilespmv.generators import degree_slope, generate_power_law, generate_uniform
from tilespmv.matrix import (CooMatrix, CsrMatrix, DegreeHistogram, FormatError, as_csr,
                             column_normalize, coo_to_csr, coo_to_ell, coo_to_hyb, csr_to_coo,
                             dense_spmv_oracle, ell_to_coo, hyb_to_coo, row_normalize,
                             symmetrize_pattern, transpose)


def triple_loop(dense, x):
    n, m = dense.shape
    y = [0.0] * n
    for i in range(n):
        acc = 0.0
        for j in range(m):
            if dense[i, j] != 0:
                acc += dense[i, j] * x[j]
        y[i] = acc
    return np.array(y)


def test_coo_to_csr_small():
    m = CooMatrix.from_triples(2, 2, [(0, 1, 1.0), (1, 0, 3.0)])
    c = coo_to_csr(m)
    assert c.row_ptr.tolist() == [0, 1, 2]
    assert c.col_idx.tolist() == [1, 0]


def test_empty_matrix_row_ptr():
    c = coo_to_csr(CooMatrix.from_triples(3, 3, []))
    assert c.row_ptr.tolist() == [0, 0, 0, 0]


def test_duplicates_are_summed():
    m = CooMatrix.from_entries(2, 2, [0, 0, 1], [1, 1, 0], [1.0, 2.5, 3.0])
    assert m.triples() == [(0, 1, 3.5), (1, 0, 3.0)]


def test_caller_arrays_stay_writable():
    rows = np.array([0, 1])
    CooMatrix.from_entries(2, 2, rows, np.array([0, 1]), np.ones(2))
    rows[0] = 1  # must not raise


def test_csr_validation():
    with pytest.raises(FormatError):
        CsrMatrix(2, 2, np.array([0, 2, 1]), np.array([0, 1]), np.ones(2))
    with pytest.raises(FormatError):
        CsrMatrix(2, 2, np.array([0, 1, 2]), np.array([0, 5]), np.ones(2))


def test_random_round_trip_1000(rng):
    keys = rng.choice(10**6, 5000, replace=False)
    m = CooMatrix.from_entries(1000, 1000, keys // 1000, keys % 1000, rng.uniform(size=5000))
    assert csr_to_coo(coo_to_csr(m)) == m


@given(coo_matrices())
def test_format_round_trips(m):
    assert csr_to_coo(coo_to_csr(m)) == m
    assert ell_to_coo(coo_to_ell(m)) == m
    assert hyb_to_coo(coo_to_hyb(m)) == m


@given(coo_matrices(), st.integers(0, 6))
def test_hyb_split_law(m, k):
    h = coo_to_hyb(m, k)
    lengths = np.bincount(m.rows, minlength=m.num_rows)
    ell_counts = (h.ell_part.col_idx >= 0).sum(axis=0)
    coo_counts = np.bincount(h.coo_part.rows, minlength=m.num_rows)
    assert np.array_equal(ell_counts, np.minimum(lengths, k))
    assert np.array_equal(coo_counts, np.maximum(0, lengths - k))


def test_hyb_example():
    m = CooMatrix.from_entries(2, 6, [0, 1, 1, 1, 1, 1], [0, 0, 1, 2, 3, 4], np.ones(6))
    h = coo_to_hyb(m, 2)
    assert h.ell_part.nnz == 3
    assert h.coo_part.nnz == 3


def test_ell_rejects_short_width():
    m = CooMatrix.from_entries(1, 3, [0, 0, 0], [0, 1, 2], np.ones(3))
    with pytest.raises(FormatError):
        coo_to_ell(m, 2)


def test_row_normalize_examples():
    m = as_csr(CooMatrix.from_dense(np.array([[2.0, 2.0], [0.0, 0.0]])))
    r = row_normalize(m).to_dense()
    assert r.tolist() == [[0.5, 0.5], [0.0, 0.0]]


def test_row_sums_random(rng):
    m = as_csr(generate_uniform(200, 150, 2000, 3, values="uniform"))
    sums = row_normalize(m).to_dense().sum(axis=1)
    nonempty = m.row_lengths() > 0
    assert np.all(np.abs(sums[nonempty] - 1) <= 1e-12)
    assert np.all(sums[~nonempty] == 0)
    csum = column_normalize(m).to_dense().sum(axis=0)
    assert np.all(np.abs(csum[m.col_lengths() > 0] - 1) <= 1e-12)


@given(coo_matrices())
def test_normalize_idempotent(m):
    m = as_csr(CooMatrix(m.num_rows, m.num_cols, m.rows, m.cols, np.abs(m.values) + 0.1))
    once = row_normalize(m)
    assert np.allclose(row_normalize(once).to_dense(), once.to_dense(), atol=1e-12, rtol=0)


def test_normalize_rejects_negative():
    with pytest.raises(ValueError):
        row_normalize(as_csr(CooMatrix.from_dense(np.array([[-1.0]]))))


def test_transpose_examples():
    eye = as_csr(CooMatrix.from_dense(np.eye(3)))
    assert transpose(eye) == eye
    m = as_csr(CooMatrix.from_triples(2, 3, [(0, 2, 4.0)]))
    assert csr_to_coo(transpose(m)).triples() == [(2, 0, 4.0)]
    assert transpose(m).shape == (3, 2)


@given(coo_matrices())
def test_double_transpose(m):
    c = as_csr(m)
    assert transpose(transpose(c)) == c
    assert np.array_equal(transpose(c).to_dense(), c.to_dense().T)


def test_symmetrize_pattern():
    m = as_csr(CooMatrix.from_triples(3, 3, [(0, 1, 2.0), (1, 0, 5.0), (2, 0, 1.0)]))
    s = symmetrize_pattern(m).to_dense()
    assert np.array_equal(s, s.T)
    assert set(np.unique(s)) <= {0.0, 1.0}
    assert s[0, 2] == 1.0 and s[0, 1] == 1.0


def test_oracle_examples():
    eye = CooMatrix.from_dense(np.eye(3))
    assert dense_spmv_oracle(eye, [1, 2, 3]).tolist() == [1, 2, 3]
    swap = CooMatrix.from_dense(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert dense_spmv_oracle(swap, [3, 4]).tolist() == [4, 3]


def test_oracle_matches_triple_loop(rng):
    a = rng.uniform(-1, 1, (50, 50)) * (rng.uniform(size=(50, 50)) < 0.2)
    x = rng.uniform(-1, 1, 50)
    y = dense_spmv_oracle(CooMatrix.from_dense(a), x)
    assert np.array_equal(y, triple_loop(a, x))


def test_degree_histogram():
    m = CooMatrix.from_triples(3, 3, [(0, 0, 1.0), (0, 1, 1.0), (2, 1, 1.0)])
    h = DegreeHistogram.of(m)
    assert h.row_counts.tolist() == [2, 0, 1]
    assert h.col_counts.tolist() == [1, 2, 0]
    d, c = DegreeHistogram.frequency(h.row_counts)
    assert d.tolist() == [1, 2] and c.tolist() == [1, 1]


def test_generator_determinism():
    a = generate_power_law(500, 2.1, 3000, 9)
    b = generate_power_law(500, 2.1, 3000, 9)
    assert a == b
    assert a.nnz == 3000
    assert generate_power_law(500, 2.1, 3000, 10) != a


def test_power_law_slope():
    m = generate_power_law(10**4, 2.1, 10**5, 0)
    slope = degree_slope(DegreeHistogram.of(m).col_counts)
    assert -2.6 <= slope <= -1.6


def test_large_alpha_is_flat():
    m = generate_power_law(10**4, 8.0, 10**5, 0)
    cols = DegreeHistogram.of(m).col_counts
    assert cols.max() <= 5 * cols.mean()


@pytest.mark.parametrize("kwargs", [dict(n=1, alpha=2.0, nnz_target=1),
                                    dict(n=10, alpha=1.0, nnz_target=5),
                                    dict(n=10, alpha=2.0, nnz_target=101)])
def test_generator_rejects_bad_input(kwargs):
    with pytest.raises(ValueError):
        generate_power_law(seed=0, **kwargs)


def test_saturated_sampler_fills_exactly():
    m = generate_power_law(20, 2.5, 400, 1)
    assert m.nnz == 400
