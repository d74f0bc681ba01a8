"""Dense K-by-K kernels used by every Gibbs update.

Posterior draws never form an explicit inverse: each draw is one Cholesky
factorization plus triangular solves.  The per-entity precision/shift
accumulation is evaluated in fixed-size chunks whose partial sums are
combined in ascending chunk order, so splitting a heavy entity across
workers reproduces the serial result bit for bit.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import lapack

from .errors import NotPositiveDefinite
from .rng import RngStream

# Entries per accumulation chunk.  Fixed: the chunk decomposition must not
# depend on the split threshold or the thread count, only on entry count.
ACCUMULATE_CHUNK = 512

_JITTER_SCALE = 1e-10
_JITTER_TRIES = 3


def cholesky_spd(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    On breakdown, adds 1e-10 * trace(a)/K to the diagonal and retries up
    to three times with 10x escalation before giving up.  Gibbs precision
    matrices are SPD in exact arithmetic, so breakdown signals
    near-singularity rather than an indefinite input.
    """
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    k = a.shape[0]
    jitter = _JITTER_SCALE * float(np.trace(a)) / max(k, 1)
    if jitter <= 0:
        jitter = _JITTER_SCALE
    for _ in range(_JITTER_TRIES):
        try:
            return np.linalg.cholesky(a + jitter * np.eye(k))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NotPositiveDefinite(
        f"matrix is not positive definite (jitter up to {jitter / 10.0:g} tried)"
    )


def solve_cholesky(chol_lower: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve A x = b given the lower Cholesky factor of A."""
    x, info = lapack.dpotrs(chol_lower, b, lower=1)
    if info != 0:
        raise NotPositiveDefinite(f"cholesky solve failed (info={info})")
    return x


def solve_lower(chol_lower: np.ndarray, b: np.ndarray,
                transposed: bool = False) -> np.ndarray:
    """Solve L x = b (or L^T x = b when transposed) for lower-triangular L."""
    x, info = lapack.dtrtrs(chol_lower, b, lower=1, trans=1 if transposed else 0)
    if info != 0:
        raise NotPositiveDefinite(f"triangular solve failed (info={info})")
    return x


def mirror_lower(a: np.ndarray) -> np.ndarray:
    """Exact symmetrization: keep the lower triangle, mirror it upward."""
    lower = np.tril(a)
    return lower + np.tril(a, -1).T


def sample_mvn_from_precision(stream: RngStream, precision: np.ndarray,
                              shift: np.ndarray, chol_lower: np.ndarray | None = None,
                              include_noise: bool = True) -> np.ndarray:
    """Draw from N(P^-1 h, P^-1) given precision P and shift h.

    The draw is P^-1 h + L^-T z with z standard normal and L = chol(P).
    With include_noise=False (test hook) the exact solution of P x = h is
    returned instead.
    """
    if chol_lower is None:
        chol_lower = cholesky_spd(precision)
    mean = solve_cholesky(chol_lower, shift)
    if not include_noise:
        return mean
    z = stream.normals(chol_lower.shape[0])
    return mean + solve_lower(chol_lower, z, transposed=True)


def sample_wishart(stream: RngStream, scale: np.ndarray, dof: float) -> np.ndarray:
    """Wishart draw via the Bartlett construction; E[draw] = dof * scale."""
    k = scale.shape[0]
    if dof < k:
        raise ValueError(f"wishart requires dof >= K, got dof={dof} for K={k}")
    chol_scale = cholesky_spd(scale)
    return _wishart_from_chol(stream, chol_scale, dof)


def _bartlett_lower(stream: RngStream, k: int, dof: float) -> np.ndarray:
    # chi-square(df) == gamma(shape=df/2, rate=1/2); diagonal first, then
    # the strict lower triangle row-major, so the draw order is fixed.
    df = dof - np.arange(k)
    diag = np.sqrt(stream.gammas(df / 2.0, np.full(k, 0.5)))
    a = np.zeros((k, k))
    np.fill_diagonal(a, diag)
    if k > 1:
        lo = np.tril_indices(k, -1)
        a[lo] = stream.normals(lo[0].size)
    return a


def _wishart_from_chol(stream: RngStream, chol_scale: np.ndarray,
                       dof: float) -> np.ndarray:
    a = _bartlett_lower(stream, chol_scale.shape[0], dof)
    m = chol_scale @ a
    return mirror_lower(m @ m.T)


def sample_wishart_from_inverse_scale(stream: RngStream, inv_scale: np.ndarray,
                                      dof: float) -> np.ndarray:
    """Wishart draw with scale W = inv_scale^-1, without inverting explicitly.

    If M = L L^T then W = L^-T L^-1, and L^-T applied to the Bartlett
    factor gives a valid square root of W.
    """
    k = inv_scale.shape[0]
    if dof < k:
        raise ValueError(f"wishart requires dof >= K, got dof={dof} for K={k}")
    chol_m = cholesky_spd(inv_scale)
    a = _bartlett_lower(stream, k, dof)
    m = solve_lower(chol_m, a, transposed=True)
    return mirror_lower(m @ m.T)


def chunk_count(n_entries: int) -> int:
    return (n_entries + ACCUMULATE_CHUNK - 1) // ACCUMULATE_CHUNK


def chunk_partials(other: np.ndarray, cols: np.ndarray, vals: np.ndarray,
                   chunk_lo: int, chunk_hi: int) -> tuple[np.ndarray, np.ndarray]:
    """Raw per-chunk partial sums of v v^T and r v over an entry range.

    `other` is the opposite mode's factor matrix (K x N); `cols`/`vals`
    are the entity's observation columns and targets.  Chunks are the
    fixed-size canonical decomposition, so any grouping of chunks across
    tasks reproduces the same partials.
    """
    k = other.shape[0]
    n = chunk_hi - chunk_lo
    a_parts = np.empty((n, k, k))
    b_parts = np.empty((n, k))
    for c in range(chunk_lo, chunk_hi):
        sl = slice(c * ACCUMULATE_CHUNK, min(cols.size, (c + 1) * ACCUMULATE_CHUNK))
        vc = other[:, cols[sl]]
        a_parts[c - chunk_lo] = vc @ vc.T
        b_parts[c - chunk_lo] = vc @ vals[sl]
    return a_parts, b_parts


def reduce_partials(a_parts: np.ndarray, b_parts: np.ndarray,
                    alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Combine chunk partials in ascending order and apply the precision."""
    a = alpha * np.sum(a_parts, axis=0)
    b = alpha * np.sum(b_parts, axis=0)
    return mirror_lower(a), b


def accumulate_precision(entries, alpha: float,
                         k: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Accumulate (alpha * sum v v^T, alpha * sum r v) over (v, r) pairs.

    Entries are consumed in the given (ascending) order; the result is
    identical no matter how the evaluation is later split across tasks.
    An empty iterator yields zeros, in which case `k` must be supplied.
    """
    pairs = list(entries)
    if not pairs:
        if k is None:
            raise ValueError("k is required to accumulate an empty entry set")
        return np.zeros((k, k)), np.zeros(k)
    vs = np.stack([np.asarray(v, dtype=np.float64) for v, _ in pairs], axis=1)
    rs = np.array([r for _, r in pairs], dtype=np.float64)
    return accumulate_precision_arrays(vs, np.arange(vs.shape[1]), rs, alpha)


def accumulate_precision_arrays(other: np.ndarray, cols: np.ndarray,
                                vals: np.ndarray, alpha: float
                                ) -> tuple[np.ndarray, np.ndarray]:
    """Array form of accumulate_precision; returns zeros for no entries."""
    k = other.shape[0]
    if cols.size == 0:
        return np.zeros((k, k)), np.zeros(k)
    a_parts, b_parts = chunk_partials(other, cols, vals, 0, chunk_count(cols.size))
    return reduce_partials(a_parts, b_parts, alpha)


def gram_matrix(factors: np.ndarray) -> np.ndarray:
    """Sum of v v^T over all columns of a K x N factor matrix."""
    return mirror_lower(factors @ factors.T)


def logit(p: float) -> float:
    return math.log(p) - math.log1p(-p)
