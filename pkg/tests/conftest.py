"""Shared synthetic-data builders for the test suite."""

import numpy as np
import pytest

from gibbsmf.data import SparseObservedMatrix, TestSet


def make_low_rank(n_rows, n_cols, k, density, noise_std, seed,
                  n_test=0, cold_rows=0):
    """Low-rank generator: returns (train matrix, test set, truth factors).

    Observed cells are sampled without replacement; test cells are
    disjoint from training cells and carry the same observation noise.
    With cold_rows > 0, the first cold_rows rows get no training cells.
    """
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((k, n_rows)) / np.sqrt(k)
    v = rng.standard_normal((k, n_cols)) / np.sqrt(k)
    n_train = int(density * n_rows * n_cols)
    cells = rng.choice(n_rows * n_cols, size=n_train + n_test, replace=False)
    rows, cols = np.divmod(cells, n_cols)
    if cold_rows:
        warm = rows >= cold_rows
        # Keep test cells preferentially on cold rows; training only warm.
        train_pick = np.nonzero(warm)[0][:n_train]
        rest = np.setdiff1d(np.arange(cells.size), train_pick)[:n_test]
    else:
        train_pick = np.arange(n_train)
        rest = np.arange(n_train, n_train + n_test)
    tr, tc = rows[train_pick], cols[train_pick]
    signal = np.einsum("ki,ki->i", u[:, tr], v[:, tc])
    train_vals = signal + noise_std * rng.standard_normal(tr.size)
    matrix = SparseObservedMatrix.from_arrays(n_rows, n_cols, tr, tc, train_vals)
    test = None
    if n_test:
        qr, qc = rows[rest], cols[rest]
        truth = np.einsum("ki,ki->i", u[:, qr], v[:, qc]) \
            + noise_std * rng.standard_normal(qr.size)
        test = TestSet(qr, qc, truth)
    return matrix, test, (u, v)


@pytest.fixture
def tiny_problem():
    matrix, test, _ = make_low_rank(40, 30, 3, density=0.3, noise_std=0.1,
                                    seed=11, n_test=60)
    return matrix, test
