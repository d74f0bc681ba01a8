"""Per-mode prior machinery: hyperparameter and latent conditionals.

Three prior families are provided.  The multivariate-normal prior with a
conjugate Normal-Wishart hyperprior resamples (mean, precision) exactly
from the current factor matrix.  The side-information prior additionally
regresses prior means on per-entity features through a link matrix.  The
spike-and-slab prior mixes a point mass at zero with a Gaussian slab,
forcing exact zeros in latent components.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import SideInfo
from .errors import ConfigError
from .linalg import (
    accumulate_precision_arrays,
    cholesky_spd,
    logit,
    mirror_lower,
    sample_mvn_from_precision,
    sample_wishart_from_inverse_scale,
    solve_cholesky,
    solve_lower,
)
from .rng import RngStream

# Above this feature dimension the link-matrix solve switches from an
# explicit Gram factorization to conjugate gradients (sparse features only).
DENSE_GRAM_LIMIT = 4096
CG_TOL = 1e-8
CG_MAX_ITER = 1000


# ---------------------------------------------------------------------------
# configuration (selected via CLI/presets)


@dataclass(frozen=True)
class NormalPriorSpec:
    kind = "normal"
    beta0: float = 2.0
    w0_scale: float = 1.0

    def describe(self) -> str:
        return f"normal:beta0={self.beta0:g}:w0={self.w0_scale:g}"


@dataclass(frozen=True)
class MacauPriorSpec:
    kind = "macau"
    beta0: float = 2.0
    w0_scale: float = 1.0
    beta_precision: float = 1.0

    def __post_init__(self):
        if not self.beta_precision > 0:
            raise ConfigError(
                f"link regularization precision must be positive, got {self.beta_precision}"
            )

    def describe(self) -> str:
        return (f"macau:beta0={self.beta0:g}:w0={self.w0_scale:g}"
                f":lambda_beta={self.beta_precision:g}")


@dataclass(frozen=True)
class SpikeSlabPriorSpec:
    kind = "spikeandslab"
    a: float = 1.0
    b: float = 1.0
    c: float = 1.0
    d: float = 1.0

    def describe(self) -> str:
        return f"spikeandslab:a={self.a:g}:b={self.b:g}:c={self.c:g}:d={self.d:g}"


PriorSpec = NormalPriorSpec | MacauPriorSpec | SpikeSlabPriorSpec


# ---------------------------------------------------------------------------
# normal / Normal-Wishart


@dataclass(frozen=True)
class NormalWishartHyper:
    """Hyperprior for one mode's (mean, precision) pair."""

    mu0: np.ndarray
    beta0: float
    w0: np.ndarray
    nu0: float
    w0_inv: np.ndarray = field(repr=False, default=None)

    @classmethod
    def create(cls, mu0, beta0, w0, nu0) -> "NormalWishartHyper":
        mu0 = np.asarray(mu0, dtype=np.float64)
        w0 = np.asarray(w0, dtype=np.float64)
        k = mu0.size
        if w0.shape != (k, k):
            raise ConfigError(f"W0 must be {k}x{k}, got {w0.shape}")
        if not beta0 > 0:
            raise ConfigError(f"beta0 must be positive, got {beta0}")
        if nu0 < k:
            raise ConfigError(f"nu0 must be >= K={k}, got {nu0}")
        w0_inv = mirror_lower(solve_cholesky(cholesky_spd(w0), np.eye(k)))
        return cls(mu0=mu0, beta0=float(beta0), w0=w0, nu0=float(nu0),
                   w0_inv=w0_inv)

    @classmethod
    def default(cls, k: int, beta0: float = 2.0,
                w0_scale: float = 1.0) -> "NormalWishartHyper":
        # Weakly informative: zero mean, identity-scaled scale matrix,
        # minimal degrees of freedom.
        return cls.create(np.zeros(k), beta0, np.eye(k) * w0_scale, float(k))


@dataclass
class ModeHyper:
    """Current sampled (mean, precision) for one mode."""

    mu: np.ndarray
    lam: np.ndarray


def normal_wishart_posterior(u: np.ndarray, hp: NormalWishartHyper):
    """Posterior hyperparameters given the K x N factor matrix u.

    Returns (mu_star, beta_star, nu_star, w_star_inv) where w_star_inv is
    the inverse of the posterior Wishart scale.
    """
    k, n = u.shape
    if n == 0:
        return hp.mu0.copy(), hp.beta0, hp.nu0, hp.w0_inv.copy()
    ubar = u.mean(axis=1)
    centered = u - ubar[:, None]
    scatter = mirror_lower(centered @ centered.T)
    diff = ubar - hp.mu0
    beta_star = hp.beta0 + n
    nu_star = hp.nu0 + n
    mu_star = (hp.beta0 * hp.mu0 + n * ubar) / beta_star
    w_star_inv = hp.w0_inv + scatter \
        + (hp.beta0 * n / beta_star) * np.outer(diff, diff)
    return mu_star, beta_star, nu_star, mirror_lower(w_star_inv)


def sample_hyper_normal(u: np.ndarray, hp: NormalWishartHyper,
                        stream: RngStream) -> ModeHyper:
    """Draw (mu, Lambda) from the Normal-Wishart conditional given factors."""
    mu_star, beta_star, nu_star, w_star_inv = normal_wishart_posterior(u, hp)
    lam = sample_wishart_from_inverse_scale(stream, w_star_inv, nu_star)
    chol_lam = cholesky_spd(lam)
    z = stream.normals(mu_star.size)
    mu = mu_star + solve_lower(chol_lam, z, transposed=True) / math.sqrt(beta_star)
    return ModeHyper(mu=mu, lam=lam)


def sample_latent_normal(prior_mean: np.ndarray, prior_precision: np.ndarray,
                         alpha: float, obs_cols: np.ndarray, obs_vals: np.ndarray,
                         other: np.ndarray, stream: RngStream,
                         include_noise: bool = True) -> np.ndarray:
    """Resample one entity's latent vector under a Gaussian prior.

    With no observations this is a draw from the prior (cold start).
    With include_noise=False (test hook) the posterior mean, i.e. the
    ridge solution, is returned.
    """
    a, b = accumulate_precision_arrays(other, obs_cols, obs_vals, alpha)
    lam_star = prior_precision + a
    shift = prior_precision @ prior_mean + b
    return sample_mvn_from_precision(stream, lam_star, shift,
                                     include_noise=include_noise)


# ---------------------------------------------------------------------------
# side-information link matrix


@dataclass
class LinkState:
    """Regression weights from side-information features to latent means."""

    beta: np.ndarray          # (D, K)
    lam_beta: float           # fixed regularization precision

    @classmethod
    def initialize(cls, dim: int, k: int, lam_beta: float) -> "LinkState":
        if not lam_beta > 0:
            raise ConfigError(f"lambda_beta must be positive, got {lam_beta}")
        return cls(beta=np.zeros((dim, k)), lam_beta=float(lam_beta))


def _cg_solve(apply_op, b: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    """Plain conjugate gradients; deterministic for fixed inputs."""
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    b_norm = math.sqrt(float(b @ b))
    if b_norm == 0.0:
        return x
    for _ in range(max_iter):
        ap = apply_op(p)
        denom = float(p @ ap)
        if denom <= 0:
            break
        step = rs / denom
        x += step * p
        r -= step * ap
        rs_new = float(r @ r)
        if math.sqrt(rs_new) <= tol * b_norm:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def sample_link_matrix(u: np.ndarray, hyper: ModeHyper, side: SideInfo,
                       state: LinkState, stream: RngStream) -> np.ndarray:
    """Draw the link matrix from its matrix-normal conditional.

    Realized as beta = G^-1 (F^T U' + F^T E1 L^-T + sqrt(lam_beta) E2 L^-T)
    with G = F^T F + lam_beta I, U' the factor deviations from the mode
    mean, E1/E2 standard normal and L = chol(Lambda).
    """
    k, n = u.shape
    d = side.dim
    if side.n_entities != n:
        raise ConfigError(
            f"side information has {side.n_entities} rows but the mode has {n} entities"
        )
    uprime = (u - hyper.mu[:, None]).T          # (N, K)
    chol_lam = cholesky_spd(hyper.lam)
    e1 = stream.normals(n * k).reshape(n, k)
    e2 = stream.normals(d * k).reshape(d, k)
    # X = E L^-T  <=>  X^T = L^-1 E^T
    e1 = solve_lower(chol_lam, e1.T).T
    e2 = solve_lower(chol_lam, e2.T).T
    rhs = side.rmatvec(uprime + e1) + math.sqrt(state.lam_beta) * e2
    if side.is_dense or d <= DENSE_GRAM_LIMIT:
        g = side.gram()
        g[np.diag_indices(d)] += state.lam_beta
        chol_g = cholesky_spd(g)
        return np.ascontiguousarray(solve_cholesky(chol_g, rhs))

    def apply_op(x):
        return side.rmatvec(side.matvec(x)) + state.lam_beta * x

    beta = np.empty((d, k))
    for col in range(k):
        beta[:, col] = _cg_solve(apply_op, rhs[:, col], CG_TOL, CG_MAX_ITER)
    return beta


def link_prior_means(side: SideInfo, state: LinkState,
                     mu: np.ndarray) -> np.ndarray:
    """Per-entity prior means mu + beta^T f_i, as a K x N matrix."""
    return mu[:, None] + side.matvec(state.beta).T


# ---------------------------------------------------------------------------
# spike and slab


@dataclass
class SnSState:
    """Spike-and-slab state for one mode.

    Invariant: a latent component is exactly zero whenever its inclusion
    indicator is zero.
    """

    pi: np.ndarray            # (K,) inclusion probabilities
    alpha_slab: np.ndarray    # (K,) slab precisions
    z: np.ndarray             # (N, K) inclusion indicators, uint8
    a: float = 1.0
    b: float = 1.0
    c: float = 1.0
    d: float = 1.0

    @classmethod
    def initialize(cls, n_entities: int, k: int, stream: RngStream,
                   a: float = 1.0, b: float = 1.0,
                   c: float = 1.0, d: float = 1.0) -> "SnSState":
        # One prior draw for (pi, alpha_slab); indicators start from a
        # Bernoulli(pi) draw rather than all-active, which avoids locking
        # the chain into a dense rotation of the loadings.
        pi = stream.betas(np.full(k, a), np.full(k, b))
        alpha_slab = stream.gammas(np.full(k, c), np.full(k, d))
        z = (stream.gen.random((n_entities, k)) < pi).astype(np.uint8)
        return cls(pi=pi, alpha_slab=alpha_slab, z=z, a=a, b=b, c=c, d=d)


@dataclass
class SnsObservedTerm:
    """One sparse-observed view's contribution to an entity's update."""

    alpha: float
    vo: np.ndarray            # (K, n_obs) other-mode factors at observed cells
    vals: np.ndarray          # (n_obs,) observed targets


@dataclass
class SnsGramTerm:
    """One fully-known view's contribution, folded through its Gram matrix."""

    alpha: float
    gram: np.ndarray          # (K, K) sum of v v^T over every other-mode entity
    b: np.ndarray             # (K,) other factors applied to the full data row


def sns_component_logodds(pi_k: float, alpha_slab_k: float,
                          lam_tilde: float, mu_tilde: float) -> float:
    """Inclusion log-odds for one component, clamped to +-700."""
    lo = logit(pi_k) + 0.5 * math.log(alpha_slab_k / lam_tilde) \
        + 0.5 * lam_tilde * mu_tilde * mu_tilde
    return max(-700.0, min(700.0, lo))


def sample_latent_sns(pi: np.ndarray, alpha_slab: np.ndarray, u: np.ndarray,
                      terms: list, stream: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Resample one entity's latent vector and indicators component-wise.

    Components are swept in ascending order; each component sees the
    residual that excludes its own current contribution.  Views contribute
    in the order given.
    """
    k = u.size
    u = u.astype(np.float64, copy=True)
    z = np.zeros(k, dtype=np.uint8)
    preds = []
    for t in terms:
        if isinstance(t, SnsObservedTerm):
            preds.append(u @ t.vo if t.vo.size else np.zeros(0))
        else:
            preds.append(t.gram @ u)
    ssqs = [
        (t.vo * t.vo).sum(axis=1) if isinstance(t, SnsObservedTerm) else None
        for t in terms
    ]

    for comp in range(k):
        lam_tilde = alpha_slab[comp]
        weighted = 0.0
        for t, pred, ssq in zip(terms, preds, ssqs):
            if isinstance(t, SnsObservedTerm):
                if t.vals.size:
                    vk = t.vo[comp]
                    lam_tilde += t.alpha * ssq[comp]
                    weighted += t.alpha * (vk @ (t.vals - pred)
                                           + u[comp] * ssq[comp])
            else:
                g_kk = t.gram[comp, comp]
                lam_tilde += t.alpha * g_kk
                weighted += t.alpha * (t.b[comp] - pred[comp] + u[comp] * g_kk)
        mu_tilde = weighted / lam_tilde

        if pi[comp] <= 0.0:
            take = 0
        elif pi[comp] >= 1.0:
            take = 1
        else:
            lo = sns_component_logodds(pi[comp], alpha_slab[comp],
                                       lam_tilde, mu_tilde)
            take = stream.bernoulli(1.0 / (1.0 + math.exp(-lo)))

        new = mu_tilde + stream.normal() / math.sqrt(lam_tilde) if take else 0.0
        z[comp] = take
        delta = new - u[comp]
        if delta != 0.0:
            for t, pred in zip(terms, preds):
                if isinstance(t, SnsObservedTerm):
                    if t.vals.size:
                        pred += delta * t.vo[comp]
                else:
                    pred += delta * t.gram[:, comp]
        u[comp] = new
    return u, z


def sample_sns_hyper(state: SnSState, u: np.ndarray,
                     stream: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Conjugate updates for inclusion probabilities and slab precisions."""
    n = state.z.shape[0]
    n_active = state.z.sum(axis=0, dtype=np.float64)
    pi = stream.betas(state.a + n_active, state.b + n - n_active)
    active_sq = ((u * u).T * state.z).sum(axis=0)
    alpha_slab = stream.gammas(state.c + 0.5 * n_active,
                               state.d + 0.5 * active_sq)
    return pi, alpha_slab
