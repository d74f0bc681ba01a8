import numpy as np
import pytest

from gibbsmf.data import (
    DenseMatrix,
    SideInfo,
    SparseFullyKnownMatrix,
    SparseObservedMatrix,
    TestSet,
)
from gibbsmf.errors import DataError


def test_observed_in_row_returns_stored_entries_in_column_order():
    m = SparseObservedMatrix.from_triplets(3, 3, [(0, 2, 5.0), (0, 1, 2.0)])
    assert list(m.observed_in_row(0)) == [(1, 2.0), (2, 5.0)]


def test_observed_in_row_cold_start_row_is_empty():
    m = SparseObservedMatrix.from_triplets(3, 3, [(0, 1, 2.0), (0, 2, 5.0)])
    assert list(m.observed_in_row(1)) == []


def test_observed_in_row_out_of_range():
    m = SparseObservedMatrix.from_triplets(3, 3, [(0, 1, 2.0)])
    with pytest.raises(DataError):
        list(m.observed_in_row(3))


def test_transpose_view_swaps_coordinates():
    m = SparseObservedMatrix.from_triplets(2, 3, [(0, 1, 2.0)])
    t = m.transpose_view()
    assert (t.n_rows, t.n_cols) == (3, 2)
    assert list(t.observed_in_row(1)) == [(0, 2.0)]


def test_transpose_is_involution_on_entry_multiset():
    rng = np.random.default_rng(0)
    rows = rng.integers(0, 7, size=30)
    cols = rng.integers(0, 5, size=30)
    keep = np.unique(rows * 5 + cols, return_index=True)[1]
    m = SparseObservedMatrix.from_arrays(7, 5, rows[keep], cols[keep],
                                         rng.standard_normal(keep.size))
    tt = m.transpose_view().transpose_view()
    assert np.array_equal(np.column_stack(m.to_coo()),
                          np.column_stack(tt.to_coo()))


def test_transpose_one_by_one_fixed_point():
    m = SparseObservedMatrix.from_triplets(1, 1, [(0, 0, 7.0)])
    t = m.transpose_view()
    assert list(t.observed_in_row(0)) == [(0, 7.0)]


def test_per_row_and_per_column_counts_sum_to_nnz():
    rng = np.random.default_rng(3)
    cells = rng.choice(20 * 11, size=60, replace=False)
    rows, cols = np.divmod(cells, 11)
    m = SparseObservedMatrix.from_arrays(20, 11, rows, cols,
                                         rng.standard_normal(60))
    assert m.row_counts.sum() == m.nnz
    assert m.transpose_view().row_counts.sum() == m.nnz


def test_duplicate_entry_is_reported_with_coordinates():
    with pytest.raises(DataError, match=r"\(1, 2\)"):
        SparseObservedMatrix.from_triplets(3, 3, [(1, 2, 1.0), (1, 2, 4.0)])


def test_out_of_bounds_indices_rejected():
    with pytest.raises(DataError, match="out of range"):
        SparseObservedMatrix.from_triplets(2, 2, [(2, 0, 1.0)])
    with pytest.raises(DataError, match="out of range"):
        SparseObservedMatrix.from_triplets(2, 2, [(0, -1, 1.0)])


def test_non_finite_values_rejected():
    with pytest.raises(DataError, match="finite"):
        SparseObservedMatrix.from_triplets(2, 2, [(0, 0, float("nan"))])
    with pytest.raises(DataError, match="finite"):
        DenseMatrix(np.array([[1.0, np.inf]]))


def test_iteration_order_stable_across_rebuilds():
    triplets = [(2, 1, 1.0), (0, 2, 2.0), (2, 0, 3.0), (1, 1, 4.0)]
    a = SparseObservedMatrix.from_triplets(3, 3, triplets)
    b = SparseObservedMatrix.from_triplets(3, 3, list(reversed(triplets)))
    for i in range(3):
        assert list(a.observed_in_row(i)) == list(b.observed_in_row(i))


def test_finalized_arrays_are_immutable():
    m = SparseObservedMatrix.from_triplets(2, 2, [(0, 0, 1.0)])
    with pytest.raises(ValueError):
        m.row_val[0] = 2.0


def test_empty_matrix_allowed():
    m = SparseObservedMatrix.from_triplets(4, 4, [])
    assert m.nnz == 0
    assert list(m.observed_in_row(2)) == []


def test_dense_matrix_row_major_flat():
    d = DenseMatrix.from_flat(2, 2, [1.0, 2.0, 3.0, 4.0])
    assert d.row(0).tolist() == [1.0, 2.0]
    assert d.column(1).tolist() == [2.0, 4.0]


def test_dense_matrix_flat_size_mismatch():
    with pytest.raises(DataError, match="expected 4"):
        DenseMatrix.from_flat(2, 2, [1.0, 2.0, 3.0])


def test_test_set_bounds_and_overlap():
    m = SparseObservedMatrix.from_triplets(3, 3, [(0, 1, 2.0), (1, 1, 1.0)])
    t = TestSet.from_triplets([(0, 1, 2.0), (2, 2, 1.0)])
    assert t.count_overlap(m) == 1
    t.check_bounds(3, 3)
    with pytest.raises(DataError):
        TestSet.from_triplets([(5, 0, 1.0)]).check_bounds(3, 3)


def test_side_info_products_match_dense_reference():
    rng = np.random.default_rng(9)
    dense_vals = rng.standard_normal((6, 4))
    dense_vals[rng.random((6, 4)) < 0.5] = 0.0
    rows, cols = np.nonzero(dense_vals)
    sparse = SideInfo(SparseFullyKnownMatrix.from_arrays(
        6, 4, rows, cols, dense_vals[rows, cols]))
    dense = SideInfo(DenseMatrix(dense_vals))
    x = rng.standard_normal(4)
    y = rng.standard_normal(6)
    w = rng.standard_normal((4, 2))
    np.testing.assert_allclose(sparse.matvec(x), dense.matvec(x), atol=1e-12)
    np.testing.assert_allclose(sparse.rmatvec(y), dense.rmatvec(y), atol=1e-12)
    np.testing.assert_allclose(sparse.matvec(w), dense.matvec(w), atol=1e-12)
    np.testing.assert_allclose(sparse.gram(), dense.gram(), atol=1e-12)
    assert sparse.dim == 4 and sparse.n_entities == 6
