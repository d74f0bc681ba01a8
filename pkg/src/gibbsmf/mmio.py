"""Matrix Market reading and writing.

Coordinate files carry sparse matrices (1-based indices), array files
carry dense matrices in column-major order.  Values are rendered with 17
significant digits so that write-then-read round-trips float64 exactly.
Parse errors name the file, the line, and a remedy.
"""

from __future__ import annotations

import numpy as np

from .data import DenseMatrix, SparseFullyKnownMatrix, SparseObservedMatrix
from .errors import DataError

_BANNER = "%%MatrixMarket"
KINDS = ("observed", "fully-known", "dense")

_SPARSE_CLASS = {
    "observed": SparseObservedMatrix,
    "fully-known": SparseFullyKnownMatrix,
}


def _fail(path, lineno, message, remedy):
    raise DataError(f"{path}:{lineno}: {message}; {remedy}")


def _parse_banner(path, line):
    fields = line.split()
    if len(fields) != 5 or fields[0].lower() != _BANNER.lower():
        _fail(path, 1, f"malformed header {line.strip()!r}",
              f"expected '{_BANNER} matrix <coordinate|array> real general'")
    obj, fmt, field, symmetry = (f.lower() for f in fields[1:])
    if obj != "matrix":
        _fail(path, 1, f"unsupported object {obj!r}", "only 'matrix' is supported")
    if fmt not in ("coordinate", "array"):
        _fail(path, 1, f"unsupported format {fmt!r}",
              "use 'coordinate' for sparse or 'array' for dense data")
    if field != "real":
        _fail(path, 1, f"unsupported field {field!r}", "only 'real' values are supported")
    if symmetry != "general":
        _fail(path, 1, f"unsupported symmetry {symmetry!r}",
              "only 'general' storage is supported")
    return fmt


def _data_lines(path, lines):
    """Yield (lineno, line) skipping comments and blank lines."""
    for lineno, line in lines:
        stripped = line.strip()
        if not stripped or stripped.startswith("%"):
            continue
        yield lineno, stripped


def read_matrix_market(path: str, kind: str = "observed"):
    """Read a Matrix Market file as the requested matrix kind.

    kind 'observed' or 'fully-known' requires a coordinate file; 'dense'
    requires an array file.  Indices are converted to 0-based.
    """
    if kind not in KINDS:
        raise DataError(f"unknown matrix kind {kind!r}; expected one of {KINDS}")
    with open(path) as fh:
        first = fh.readline()
        if not first:
            _fail(path, 1, "empty file", "provide a Matrix Market header")
        fmt = _parse_banner(path, first)
        want_fmt = "array" if kind == "dense" else "coordinate"
        if fmt != want_fmt:
            _fail(path, 1, f"{fmt!r} file cannot be read as kind {kind!r}",
                  f"a {kind} matrix requires a {want_fmt} file")
        numbered = _data_lines(path, enumerate(fh, start=2))
        if fmt == "coordinate":
            return _read_coordinate(path, numbered, kind)
        return _read_array(path, numbered)


def _read_coordinate(path, numbered, kind):
    try:
        lineno, size_line = next(numbered)
    except StopIteration:
        _fail(path, 2, "missing size line", "expected '<rows> <cols> <nnz>'")
    fields = size_line.split()
    if len(fields) != 3:
        _fail(path, lineno, f"bad size line {size_line!r}",
              "expected '<rows> <cols> <nnz>'")
    try:
        n_rows, n_cols, nnz = (int(f) for f in fields)
    except ValueError:
        _fail(path, lineno, f"non-integer size line {size_line!r}",
              "expected '<rows> <cols> <nnz>'")
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz, dtype=np.float64)
    count = 0
    for lineno, line in numbered:
        if count >= nnz:
            _fail(path, lineno, f"more than the declared {nnz} entries",
                  "fix the entry count in the size line")
        fields = line.split()
        if len(fields) != 3:
            _fail(path, lineno, f"bad entry line {line!r}", "expected '<i> <j> <value>'")
        try:
            i, j, v = int(fields[0]), int(fields[1]), float(fields[2])
        except ValueError:
            _fail(path, lineno, f"unparsable entry {line!r}", "expected '<i> <j> <value>'")
        if not (1 <= i <= n_rows and 1 <= j <= n_cols):
            _fail(path, lineno, f"index ({i}, {j}) out of bounds for "
                  f"{n_rows}x{n_cols}", "Matrix Market indices are 1-based")
        rows[count] = i - 1
        cols[count] = j - 1
        vals[count] = v
        count += 1
    if count != nnz:
        _fail(path, lineno if count else 2,
              f"found {count} entries but the size line declares {nnz}",
              "fix the entry count in the size line")
    try:
        return _SPARSE_CLASS[kind].from_arrays(n_rows, n_cols, rows, cols, vals)
    except DataError as exc:
        raise DataError(f"{path}: {exc}; remove the duplicate or fix the data") \
            from None


def _read_array(path, numbered):
    try:
        lineno, size_line = next(numbered)
    except StopIteration:
        _fail(path, 2, "missing size line", "expected '<rows> <cols>'")
    fields = size_line.split()
    if len(fields) != 2:
        _fail(path, lineno, f"bad size line {size_line!r}", "expected '<rows> <cols>'")
    try:
        n_rows, n_cols = int(fields[0]), int(fields[1])
    except ValueError:
        _fail(path, lineno, f"non-integer size line {size_line!r}",
              "expected '<rows> <cols>'")
    total = n_rows * n_cols
    flat = np.empty(total, dtype=np.float64)
    count = 0
    for lineno, line in numbered:
        for token in line.split():
            if count >= total:
                _fail(path, lineno, f"more than the declared {total} values",
                      "fix the dimensions in the size line")
            try:
                flat[count] = float(token)
            except ValueError:
                _fail(path, lineno, f"unparsable value {token!r}",
                      "array files contain one real value per line")
            count += 1
    if count != total:
        _fail(path, lineno if count else 2,
              f"found {count} values but {n_rows}x{n_cols} requires {total}",
              "fix the dimensions or supply the missing values")
    # Array files are column-major.
    return DenseMatrix.from_flat(n_rows, n_cols, flat, order="F")


def write_matrix_market(path: str, matrix) -> None:
    """Write a matrix container back to Matrix Market text."""
    if isinstance(matrix, DenseMatrix):
        write_array(path, matrix.values)
        return
    rows, cols, vals = matrix.to_coo()
    with open(path, "w") as fh:
        fh.write(f"{_BANNER} matrix coordinate real general\n")
        fh.write(f"{matrix.n_rows} {matrix.n_cols} {vals.size}\n")
        for i, j, v in zip(rows, cols, vals):
            fh.write(f"{i + 1} {j + 1} {v:.17g}\n")


def write_array(path: str, values: np.ndarray) -> None:
    """Write a 2-D float array as a Matrix Market array file."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    n_rows, n_cols = values.shape
    with open(path, "w") as fh:
        fh.write(f"{_BANNER} matrix array real general\n")
        fh.write(f"{n_rows} {n_cols}\n")
        for j in range(n_cols):
            for i in range(n_rows):
                fh.write(f"{values[i, j]:.17g}\n")


def read_array(path: str) -> np.ndarray:
    """Read a Matrix Market array file as a plain 2-D float array."""
    dense = read_matrix_market(path, kind="dense")
    return np.array(dense.values)
