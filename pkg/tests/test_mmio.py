import numpy as np
import pytest
import scipy.io

from gibbsmf.data import DenseMatrix, SparseFullyKnownMatrix, SparseObservedMatrix
from gibbsmf.errors import DataError
from gibbsmf.mmio import (
    read_array,
    read_matrix_market,
    write_array,
    write_matrix_market,
)


def write_text(path, text):
    path.write_text(text)
    return str(path)


def test_coordinate_round_definition(tmp_path):
    path = write_text(tmp_path / "a.mtx",
                      "%%MatrixMarket matrix coordinate real general\n"
                      "2 3 1\n"
                      "1 2 5.0\n")
    m = read_matrix_market(path, kind="observed")
    assert isinstance(m, SparseObservedMatrix)
    assert (m.n_rows, m.n_cols, m.nnz) == (2, 3, 1)
    assert list(m.observed_in_row(0)) == [(1, 5.0)]


def test_fully_known_kind(tmp_path):
    path = write_text(tmp_path / "a.mtx",
                      "%%MatrixMarket matrix coordinate real general\n"
                      "2 2 1\n"
                      "2 2 -1.5\n")
    m = read_matrix_market(path, kind="fully-known")
    assert isinstance(m, SparseFullyKnownMatrix)


def test_duplicate_coordinate_rejected(tmp_path):
    path = write_text(tmp_path / "dup.mtx",
                      "%%MatrixMarket matrix coordinate real general\n"
                      "2 2 2\n"
                      "1 1 1.0\n"
                      "1 1 2.0\n")
    with pytest.raises(DataError, match="duplicate"):
        read_matrix_market(path, kind="observed")


def test_array_file_is_column_major(tmp_path):
    path = write_text(tmp_path / "d.mtx",
                      "%%MatrixMarket matrix array real general\n"
                      "2 2\n1\n2\n3\n4\n")
    m = read_matrix_market(path, kind="dense")
    assert isinstance(m, DenseMatrix)
    np.testing.assert_array_equal(m.values, [[1.0, 3.0], [2.0, 4.0]])
    # Cross-check against the scipy reference reader.
    np.testing.assert_array_equal(m.values, scipy.io.mmread(path))


def test_coordinate_agrees_with_reference_reader(tmp_path):
    rng = np.random.default_rng(0)
    cells = rng.choice(7 * 9, size=20, replace=False)
    rows, cols = np.divmod(cells, 9)
    vals = rng.standard_normal(20)
    m = SparseObservedMatrix.from_arrays(7, 9, rows, cols, vals)
    path = str(tmp_path / "x.mtx")
    write_matrix_market(path, m)
    ref = scipy.io.mmread(path).toarray()
    mine = np.zeros((7, 9))
    r, c, v = m.to_coo()
    mine[r, c] = v
    np.testing.assert_array_equal(mine, ref)


@pytest.mark.parametrize("header,match", [
    ("%%NotMatrixMarket matrix coordinate real general", "malformed header"),
    ("%%MatrixMarket matrix coordinate real", "malformed header"),
    ("%%MatrixMarket tensor coordinate real general", "unsupported object"),
    ("%%MatrixMarket matrix list real general", "unsupported format"),
    ("%%MatrixMarket matrix coordinate complex general", "unsupported field"),
    ("%%MatrixMarket matrix coordinate real symmetric", "unsupported symmetry"),
])
def test_header_errors_name_file_and_line(tmp_path, header, match):
    path = write_text(tmp_path / "bad.mtx", header + "\n1 1 0\n")
    with pytest.raises(DataError, match=match) as exc:
        read_matrix_market(path, kind="observed")
    assert "bad.mtx:1" in str(exc.value)


def test_kind_format_mismatch(tmp_path):
    path = write_text(tmp_path / "d.mtx",
                      "%%MatrixMarket matrix array real general\n"
                      "1 1\n1.0\n")
    with pytest.raises(DataError, match="requires a coordinate file"):
        read_matrix_market(path, kind="observed")
    path2 = write_text(tmp_path / "c.mtx",
                       "%%MatrixMarket matrix coordinate real general\n"
                       "1 1 1\n1 1 1.0\n")
    with pytest.raises(DataError, match="requires a array|requires an array"):
        read_matrix_market(path2, kind="dense")


def test_entry_count_mismatch(tmp_path):
    too_few = write_text(tmp_path / "few.mtx",
                         "%%MatrixMarket matrix coordinate real general\n"
                         "2 2 2\n1 1 1.0\n")
    with pytest.raises(DataError, match="declares 2"):
        read_matrix_market(too_few, kind="observed")
    too_many = write_text(tmp_path / "many.mtx",
                          "%%MatrixMarket matrix coordinate real general\n"
                          "2 2 1\n1 1 1.0\n2 2 1.0\n")
    with pytest.raises(DataError, match="more than the declared"):
        read_matrix_market(too_many, kind="observed")


def test_out_of_bounds_index(tmp_path):
    path = write_text(tmp_path / "oob.mtx",
                      "%%MatrixMarket matrix coordinate real general\n"
                      "2 2 1\n3 1 1.0\n")
    with pytest.raises(DataError, match="out of bounds"):
        read_matrix_market(path, kind="observed")


def test_comments_and_blank_lines_skipped(tmp_path):
    path = write_text(tmp_path / "c.mtx",
                      "%%MatrixMarket matrix coordinate real general\n"
                      "% a comment\n\n"
                      "2 2 1\n"
                      "% another\n"
                      "1 1 4.25\n")
    m = read_matrix_market(path, kind="observed")
    assert list(m.observed_in_row(0)) == [(0, 4.25)]


def test_write_read_round_trip_fuzz(tmp_path):
    # 100 random matrices, sparse and dense, must survive a write-read
    # cycle bit-exactly.
    rng = np.random.default_rng(1234)
    for trial in range(100):
        n_rows = int(rng.integers(1, 12))
        n_cols = int(rng.integers(1, 12))
        path = str(tmp_path / f"m{trial}.mtx")
        if trial % 3 == 2:
            dense = DenseMatrix(rng.standard_normal((n_rows, n_cols))
                                * 10.0 ** rng.integers(-12, 12))
            write_matrix_market(path, dense)
            back = read_matrix_market(path, kind="dense")
            assert np.array_equal(back.values, dense.values)
        else:
            nnz = int(rng.integers(0, n_rows * n_cols + 1))
            cells = rng.choice(n_rows * n_cols, size=nnz, replace=False)
            rows, cols = np.divmod(cells, n_cols)
            vals = rng.standard_normal(nnz) * 10.0 ** rng.integers(-12, 12)
            m = SparseObservedMatrix.from_arrays(n_rows, n_cols, rows, cols, vals)
            write_matrix_market(path, m)
            back = read_matrix_market(path, kind="observed")
            assert np.array_equal(back.row_ptr, m.row_ptr)
            assert np.array_equal(back.row_col, m.row_col)
            assert np.array_equal(back.row_val, m.row_val)


def test_array_write_read_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    arr = rng.standard_normal((5, 3)) * 1e-7
    path = str(tmp_path / "a.mtx")
    write_array(path, arr)
    assert np.array_equal(read_array(path), arr)
    vec = rng.standard_normal(4)
    write_array(str(tmp_path / "v.mtx"), vec)
    assert np.array_equal(read_array(str(tmp_path / "v.mtx")).ravel(), vec)
