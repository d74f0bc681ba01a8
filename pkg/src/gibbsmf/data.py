"""In-memory training data: sparse/dense matrices, test sets, side information.

Sparse matrices are finalized at construction into a compressed-per-row
layout plus a compressed-per-column twin, so both access directions are
available during sampling without per-iteration transposition.  Finalized
matrices are immutable and safe to share across workers.
"""

from __future__ import annotations

from typing import Iterable, Iterator

import numpy as np

from .errors import DataError


def _as_index_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.int64)
    if arr.ndim != 1:
        raise DataError(f"{name} indices must be one-dimensional")
    return arr


def _compress(n_major: int, major: np.ndarray, minor: np.ndarray, values: np.ndarray):
    """Sort entries by (major, minor) and build an indptr array.

    Returns (indptr, minor_sorted, values_sorted, order) with entries in
    ascending (major, minor) order; raises on duplicate coordinates.
    """
    order = np.lexsort((minor, major))
    mj = major[order]
    mn = minor[order]
    vl = values[order]
    if mj.size > 1:
        dup = (mj[1:] == mj[:-1]) & (mn[1:] == mn[:-1])
        if dup.any():
            k = int(np.argmax(dup))
            raise DataError(
                f"duplicate entry at ({int(mj[k + 1])}, {int(mn[k + 1])})"
            )
    indptr = np.zeros(n_major + 1, dtype=np.int64)
    np.cumsum(np.bincount(mj, minlength=n_major), out=indptr[1:])
    return indptr, mn, vl


def _freeze(*arrays: np.ndarray) -> None:
    for a in arrays:
        a.flags.writeable = False


class CompressedSparseMatrix:
    """Base container for coordinate data finalized into CSR + CSC form.

    Subclasses fix the meaning of absent cells (unknown vs. known zero).
    """

    def __init__(self, n_rows, n_cols, row_ptr, row_col, row_val,
                 col_ptr, col_row, col_val):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.row_ptr = row_ptr
        self.row_col = row_col
        self.row_val = row_val
        self.col_ptr = col_ptr
        self.col_row = col_row
        self.col_val = col_val

    @classmethod
    def from_arrays(cls, n_rows: int, n_cols: int, rows, cols, values):
        n_rows = int(n_rows)
        n_cols = int(n_cols)
        if n_rows < 0 or n_cols < 0:
            raise DataError("matrix dimensions must be non-negative")
        rows = _as_index_array(rows, "row")
        cols = _as_index_array(cols, "column")
        values = np.asarray(values, dtype=np.float64)
        if not (rows.shape == cols.shape == values.shape):
            raise DataError("rows, cols and values must have equal length")
        if rows.size:
            if rows.min(initial=0) < 0 or rows.max(initial=-1) >= n_rows:
                bad = int(rows[(rows < 0) | (rows >= n_rows)][0])
                raise DataError(f"row index {bad} out of range for {n_rows} rows")
            if cols.min(initial=0) < 0 or cols.max(initial=-1) >= n_cols:
                bad = int(cols[(cols < 0) | (cols >= n_cols)][0])
                raise DataError(f"column index {bad} out of range for {n_cols} columns")
        if not np.isfinite(values).all():
            raise DataError("matrix values must all be finite")
        row_ptr, row_col, row_val = _compress(n_rows, rows, cols, values)
        col_ptr, col_row, col_val = _compress(n_cols, cols, rows, values)
        _freeze(row_ptr, row_col, row_val, col_ptr, col_row, col_val)
        return cls(n_rows, n_cols, row_ptr, row_col, row_val,
                   col_ptr, col_row, col_val)

    @classmethod
    def from_triplets(cls, n_rows: int, n_cols: int,
                      triplets: Iterable[tuple[int, int, float]]):
        entries = list(triplets)
        if entries:
            rows, cols, values = zip(*entries)
        else:
            rows, cols, values = (), (), ()
        return cls.from_arrays(n_rows, n_cols,
                               np.array(rows, dtype=np.int64),
                               np.array(cols, dtype=np.int64),
                               np.array(values, dtype=np.float64))

    @property
    def nnz(self) -> int:
        return int(self.row_col.size)

    @property
    def row_counts(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    @property
    def col_counts(self) -> np.ndarray:
        return np.diff(self.col_ptr)

    def row_entries(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Column indices and values of row i, ascending by column."""
        if not 0 <= i < self.n_rows:
            raise DataError(f"row index {i} out of range for {self.n_rows} rows")
        lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
        return self.row_col[lo:hi], self.row_val[lo:hi]

    def observed_in_row(self, i: int) -> Iterator[tuple[int, float]]:
        """Yield the stored (column, value) pairs of row i in column order."""
        cols, vals = self.row_entries(i)
        for c, v in zip(cols, vals):
            yield int(c), float(v)

    def transpose_view(self):
        """Logical transpose sharing this matrix's finalized arrays."""
        return type(self)(self.n_cols, self.n_rows,
                          self.col_ptr, self.col_row, self.col_val,
                          self.row_ptr, self.row_col, self.row_val)

    def to_coo(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Entries as (rows, cols, values) in ascending (row, col) order."""
        rows = np.repeat(np.arange(self.n_rows, dtype=np.int64), self.row_counts)
        return rows, self.row_col.copy(), self.row_val.copy()


class SparseObservedMatrix(CompressedSparseMatrix):
    """Coordinate matrix where absent cells are unknown (not zero)."""


class SparseFullyKnownMatrix(CompressedSparseMatrix):
    """Coordinate matrix where absent cells are known zeros.

    Every cell participates in the likelihood; only the nonzeros are stored.
    """


class DenseMatrix:
    """Fully known dense matrix stored row-major as float64."""

    def __init__(self, values: np.ndarray):
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise DataError("dense matrix requires a 2-D value array")
        if not np.isfinite(values).all():
            raise DataError("dense matrix values must all be finite")
        values.flags.writeable = False
        self.values = values
        self.n_rows, self.n_cols = values.shape

    @classmethod
    def from_flat(cls, n_rows: int, n_cols: int, flat, order: str = "C"):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != n_rows * n_cols:
            raise DataError(
                f"expected {n_rows * n_cols} values for a "
                f"{n_rows}x{n_cols} dense matrix, got {flat.size}"
            )
        return cls(flat.reshape((n_rows, n_cols), order=order))

    @property
    def nnz(self) -> int:
        return self.n_rows * self.n_cols

    def row(self, i: int) -> np.ndarray:
        return self.values[i]

    def column(self, j: int) -> np.ndarray:
        return self.values[:, j]


class TestSet:
    """Held-out (row, col, value) cells used for RMSE reporting."""

    __test__ = False  # not a pytest class, despite the name

    def __init__(self, rows, cols, values):
        self.rows = _as_index_array(rows, "test row")
        self.cols = _as_index_array(cols, "test column")
        self.values = np.asarray(values, dtype=np.float64)
        if not (self.rows.shape == self.cols.shape == self.values.shape):
            raise DataError("test rows, cols and values must have equal length")
        if not np.isfinite(self.values).all():
            raise DataError("test values must all be finite")
        _freeze(self.rows, self.cols, self.values)

    @classmethod
    def from_triplets(cls, triplets: Iterable[tuple[int, int, float]]):
        entries = list(triplets)
        if entries:
            rows, cols, values = zip(*entries)
        else:
            rows, cols, values = (), (), ()
        return cls(np.array(rows, dtype=np.int64),
                   np.array(cols, dtype=np.int64),
                   np.array(values, dtype=np.float64))

    def __len__(self) -> int:
        return int(self.rows.size)

    def check_bounds(self, n_rows: int, n_cols: int) -> None:
        if len(self) == 0:
            return
        if self.rows.max() >= n_rows or self.rows.min() < 0 \
                or self.cols.max() >= n_cols or self.cols.min() < 0:
            raise DataError(
                f"test cell indices exceed training dimensions {n_rows}x{n_cols}"
            )

    def count_overlap(self, matrix: CompressedSparseMatrix) -> int:
        """Number of test cells that also appear as training entries.

        Overlap is reported as a warning count by the session, not an error.
        """
        n = 0
        for i, j in zip(self.rows, self.cols):
            cols, _ = matrix.row_entries(int(i))
            k = np.searchsorted(cols, j)
            if k < cols.size and cols[k] == j:
                n += 1
        return n


class SideInfo:
    """Per-entity feature matrix decorating one mode of the training data.

    Features may be dense or sparse fully-known; rows must line up with
    the entities of the mode the side information is attached to.
    """

    def __init__(self, features):
        if not isinstance(features, (DenseMatrix, SparseFullyKnownMatrix)):
            raise DataError(
                "side information must be a DenseMatrix or SparseFullyKnownMatrix"
            )
        self.features = features
        # Entry-wise row index, needed for scatter-style products on sparse
        # features; empty for dense storage.
        if isinstance(features, SparseFullyKnownMatrix):
            self._entry_rows = np.repeat(
                np.arange(features.n_rows, dtype=np.int64), features.row_counts
            )
            self._entry_rows.flags.writeable = False
        else:
            self._entry_rows = None

    @property
    def n_entities(self) -> int:
        return self.features.n_rows

    @property
    def dim(self) -> int:
        return self.features.n_cols

    @property
    def is_dense(self) -> bool:
        return isinstance(self.features, DenseMatrix)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """F @ x for a length-D vector or (D, K) matrix."""
        if self.is_dense:
            return self.features.values @ x
        f = self.features
        out_shape = (f.n_rows,) if x.ndim == 1 else (f.n_rows, x.shape[1])
        out = np.zeros(out_shape)
        contrib = f.row_val[:, None] * x[f.row_col] if x.ndim > 1 \
            else f.row_val * x[f.row_col]
        np.add.at(out, self._entry_rows, contrib)
        return out

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        """F.T @ y for a length-N vector or (N, K) matrix."""
        if self.is_dense:
            return self.features.values.T @ y
        f = self.features
        out_shape = (f.n_cols,) if y.ndim == 1 else (f.n_cols, y.shape[1])
        out = np.zeros(out_shape)
        contrib = f.row_val[:, None] * y[self._entry_rows] if y.ndim > 1 \
            else f.row_val * y[self._entry_rows]
        np.add.at(out, f.row_col, contrib)
        return out

    def gram(self) -> np.ndarray:
        """F.T @ F as a dense (D, D) matrix."""
        if self.is_dense:
            v = self.features.values
            return v.T @ v
        f = self.features
        out = np.zeros((f.n_cols, f.n_cols))
        for i in range(f.n_rows):
            cols, vals = f.row_entries(i)
            if cols.size:
                out[np.ix_(cols, cols)] += np.outer(vals, vals)
        return out
