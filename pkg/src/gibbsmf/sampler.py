"""The Gibbs sampling session.

Each iteration resamples, for every mode in a fixed order (column modes
in view-declaration order, then the shared row mode): the mode's
hyperparameters, then every entity of that mode.  Entity updates within
a mode are independent and run in parallel; hyperparameter, link-matrix
and noise updates are serial phases between the parallel ones.  Adaptive
noise is updated once per iteration, and post-burn-in iterations feed a
streaming mean/variance aggregate over the test cells.

Determinism contract: given the same configuration and seed, the full
output (factors, RMSE trace, predictions, snapshots) is bit-identical
for any thread count and any heavy-entity split threshold.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .data import (
    CompressedSparseMatrix,
    DenseMatrix,
    SideInfo,
    SparseFullyKnownMatrix,
    SparseObservedMatrix,
    TestSet,
)
from .errors import ConfigError, DataError, NumericalError, SnapshotError
from .linalg import (
    chunk_count,
    chunk_partials,
    gram_matrix,
    reduce_partials,
    sample_mvn_from_precision,
)
from .noise import NoiseSpec, NoiseState, update_precision
from .priors import (
    LinkState,
    MacauPriorSpec,
    ModeHyper,
    NormalPriorSpec,
    NormalWishartHyper,
    PriorSpec,
    SnSState,
    SnsGramTerm,
    SnsObservedTerm,
    SpikeSlabPriorSpec,
    link_prior_means,
    sample_hyper_normal,
    sample_latent_sns,
    sample_link_matrix,
    sample_sns_hyper,
)
from .rng import (
    HYPER_DRAW,
    INIT_DRAW,
    LINK_DRAW,
    NOISE_DRAW,
    SNS_HYPER_DRAW,
    stream_for,
)
from . import parallel


# ---------------------------------------------------------------------------
# configuration and data grouping


@dataclass
class SessionConfig:
    num_latent: int
    burnin: int
    nsamples: int
    seed: int = 0
    threads: int = 1                  # 0 = one worker per available core
    split_threshold: int = 4096       # entity entry count above which its
                                      # accumulation is split into subtasks
    checkpoint_every: int = 0         # iterations; 0 disables checkpoints
    save_prefix: str | None = None
    csv_trace: str | None = None

    def __post_init__(self):
        if self.num_latent < 1:
            raise ConfigError(f"num_latent must be >= 1, got {self.num_latent}")
        if self.nsamples < 1:
            raise ConfigError(f"nsamples must be >= 1, got {self.nsamples}")
        if self.burnin < 0:
            raise ConfigError(f"burnin must be >= 0, got {self.burnin}")
        if self.split_threshold < 1:
            raise ConfigError(
                f"split_threshold must be >= 1, got {self.split_threshold}"
            )
        if self.threads < 0:
            raise ConfigError(f"threads must be >= 0, got {self.threads}")

    def resolved_threads(self) -> int:
        return self.threads if self.threads > 0 else (os.cpu_count() or 1)


TrainingMatrix = CompressedSparseMatrix | DenseMatrix


@dataclass
class ViewData:
    matrix: TrainingMatrix
    col_mode: int = 1


class ViewSet:
    """Training matrices sharing one row mode (mode 0)."""

    def __init__(self, views: list[ViewData]):
        if not views:
            raise ConfigError("at least one training matrix is required")
        n_rows = views[0].matrix.n_rows
        sizes = {0: n_rows}
        for v in views:
            if v.matrix.n_rows != n_rows:
                raise DataError(
                    f"all views must share the row count {n_rows}, "
                    f"got {v.matrix.n_rows}"
                )
            if v.col_mode < 1:
                raise ConfigError("column mode ids must be >= 1")
            prev = sizes.get(v.col_mode)
            if prev is not None and prev != v.matrix.n_cols:
                raise DataError(
                    f"views disagree on the size of mode {v.col_mode}: "
                    f"{prev} vs {v.matrix.n_cols}"
                )
            sizes[v.col_mode] = v.matrix.n_cols
        n_modes = max(sizes) + 1
        missing = [m for m in range(n_modes) if m not in sizes]
        if missing:
            raise ConfigError(f"column mode ids must be contiguous; missing {missing}")
        self.views = list(views)
        self.mode_sizes = [sizes[m] for m in range(n_modes)]

    @classmethod
    def single(cls, matrix: TrainingMatrix) -> "ViewSet":
        return cls([ViewData(matrix=matrix, col_mode=1)])

    @property
    def n_modes(self) -> int:
        return len(self.mode_sizes)

    def update_order(self) -> list[int]:
        """Column modes in view-declaration order, then the row mode."""
        order = []
        for v in self.views:
            if v.col_mode not in order:
                order.append(v.col_mode)
        order.append(0)
        return order


# ---------------------------------------------------------------------------
# model state and outputs


@dataclass
class LatentModel:
    """Per-mode factor matrices plus prior state."""

    factors: list[np.ndarray]
    hypers: list[ModeHyper | None]
    links: list[LinkState | None]
    sns: list[SnSState | None]


class PredictionAggregate:
    """Streaming mean and squared-deviation sum per test cell."""

    def __init__(self, test: TestSet):
        n = len(test)
        self.rows = test.rows
        self.cols = test.cols
        self.truth = test.values
        self.mean = np.zeros(n)
        self.m2 = np.zeros(n)
        self.count = 0
        self._index = None

    def update(self, preds: np.ndarray) -> None:
        self.count += 1
        delta = preds - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (preds - self.mean)

    def predict(self, i: int, j: int) -> tuple[float, float]:
        """Posterior mean and sample std of the prediction at one test cell."""
        if self.count < 1:
            raise DataError("no samples collected yet")
        if self._index is None:
            self._index = {(int(r), int(c)): k
                           for k, (r, c) in enumerate(zip(self.rows, self.cols))}
        k = self._index.get((int(i), int(j)))
        if k is None:
            raise DataError(f"({i}, {j}) is not a test cell")
        std = math.sqrt(self.m2[k] / (self.count - 1)) if self.count > 1 else 0.0
        return float(self.mean[k]), std

    def rmse(self) -> float:
        if self.count < 1:
            raise DataError("no samples collected yet")
        if self.truth.size == 0:
            raise DataError("empty test set")
        err = self.mean - self.truth
        return math.sqrt(float(np.mean(err * err)))


@dataclass
class TraceRow:
    iteration: int
    phase: str                   # "burnin" or "sample"
    rmse: float
    alphas: tuple[float, ...]

    def csv(self) -> str:
        cells = [str(self.iteration), self.phase, repr(float(self.rmse))]
        cells += [repr(float(a)) for a in self.alphas]
        return ",".join(cells)


@dataclass
class RunResult:
    final_rmse: float
    aggregate: PredictionAggregate | None
    trace: list[TraceRow]
    model: LatentModel
    noise_alphas: list[float]
    sns_inclusion: dict[int, np.ndarray]
    iter_seconds: list[float]
    test_overlap: int


# ---------------------------------------------------------------------------
# per-phase context shipped to workers


@dataclass
class ViewPhaseCtx:
    view_idx: int
    other_mode: int
    kind: str                    # 'obs' | 'fk' | 'dense'
    alpha: float
    gram: np.ndarray | None      # unscaled Gram for 'fk'/'dense' views


@dataclass
class PhaseParams:
    mode: int
    iteration: int
    prior_kind: str              # 'normal' | 'macau' | 'sns'
    views: list[ViewPhaseCtx]
    lam: np.ndarray | None = None
    h0: np.ndarray | None = None         # shared prior shift (normal prior)
    use_h0_matrix: bool = False          # macau: per-entity shift in scratch
    pi: np.ndarray | None = None
    alpha_slab: np.ndarray | None = None


def _view_kind(matrix: TrainingMatrix) -> str:
    if isinstance(matrix, SparseObservedMatrix):
        return "obs"
    if isinstance(matrix, SparseFullyKnownMatrix):
        return "fk"
    if isinstance(matrix, DenseMatrix):
        return "dense"
    raise ConfigError(f"unsupported training matrix type {type(matrix).__name__}")


# ---------------------------------------------------------------------------
# the session


class Session:
    """One factorization run over a fixed data set and configuration."""

    def __init__(self, cfg: SessionConfig, views: ViewSet | TrainingMatrix,
                 priors: list[PriorSpec] | PriorSpec,
                 noise: list[NoiseSpec] | NoiseSpec,
                 side_info: dict[int, SideInfo] | None = None,
                 test: TestSet | None = None):
        if not isinstance(views, ViewSet):
            views = ViewSet.single(views)
        self.cfg = cfg
        self.views = views
        self.k = cfg.num_latent
        n_modes = views.n_modes
        if not isinstance(priors, (list, tuple)):
            priors = [priors] * n_modes
        if len(priors) != n_modes:
            raise ConfigError(
                f"expected one prior per mode ({n_modes}), got {len(priors)}"
            )
        self.priors = list(priors)
        if not isinstance(noise, (list, tuple)):
            noise = [noise] * len(views.views)
        if len(noise) != len(views.views):
            raise ConfigError(
                f"expected one noise spec per view ({len(views.views)}), "
                f"got {len(noise)}"
            )
        self.noise_specs = list(noise)
        self.side_info = dict(side_info or {})
        for mode, side in self.side_info.items():
            if not 0 <= mode < n_modes:
                raise ConfigError(f"side information attached to unknown mode {mode}")
            if side.n_entities != views.mode_sizes[mode]:
                raise DataError(
                    f"side information for mode {mode} has {side.n_entities} rows, "
                    f"expected {views.mode_sizes[mode]}"
                )
        for mode, spec in enumerate(self.priors):
            if isinstance(spec, MacauPriorSpec) and mode not in self.side_info:
                raise ConfigError(
                    f"mode {mode} uses the side-information prior but has no "
                    f"side information attached"
                )
        self.test = test
        self.test_overlap = 0
        if test is not None:
            v0 = views.views[0].matrix
            test.check_bounds(v0.n_rows, v0.n_cols)
            if isinstance(v0, CompressedSparseMatrix):
                self.test_overlap = test.count_overlap(v0)

        self._threads = cfg.resolved_threads()
        self._use_shared = self._threads > 1
        self._transposed = [
            v.matrix.transpose_view() if isinstance(v.matrix, CompressedSparseMatrix)
            else None
            for v in views.views
        ]
        # Static per-mode sparse entry counts drive the heavy-entity split.
        self._mode_counts = []
        for mode in range(n_modes):
            counts = np.zeros(views.mode_sizes[mode], dtype=np.int64)
            for vi, v in enumerate(views.views):
                if isinstance(v.matrix, CompressedSparseMatrix):
                    if mode == 0:
                        counts += v.matrix.row_counts
                    elif v.col_mode == mode:
                        counts += v.matrix.col_counts
            self._mode_counts.append(counts)

        self._alloc_model()
        self._engine = parallel.Engine(self, self._threads)
        self._digest = None

    # -- construction helpers ------------------------------------------------

    def _alloc(self, shape, dtype=np.float64):
        if self._use_shared:
            return parallel.shared_array(shape, dtype)
        return np.zeros(shape, dtype=dtype)

    def _alloc_model(self):
        k = self.k
        sizes = self.views.mode_sizes
        self.factors = [self._alloc((k, n)) for n in sizes]
        self.hypers: list[ModeHyper | None] = [None] * len(sizes)
        self.links: list[LinkState | None] = [None] * len(sizes)
        self.sns: list[SnSState | None] = [None] * len(sizes)
        self.nw_hypers: list[NormalWishartHyper | None] = [None] * len(sizes)
        self._sns_z = [None] * len(sizes)
        self._prior_shift = [None] * len(sizes)   # macau scratch: Lambda @ Mhat
        for mode, spec in enumerate(self.priors):
            if isinstance(spec, (NormalPriorSpec, MacauPriorSpec)):
                self.nw_hypers[mode] = NormalWishartHyper.default(
                    k, beta0=spec.beta0, w0_scale=spec.w0_scale)
            if isinstance(spec, MacauPriorSpec):
                self._prior_shift[mode] = self._alloc((k, sizes[mode]))
            if isinstance(spec, SpikeSlabPriorSpec):
                self._sns_z[mode] = self._alloc((sizes[mode], k), dtype=np.uint8)
        self.noise_states: list[NoiseState | None] = [None] * len(self.views.views)
        # Precompute per-row sums of squared targets for fully-known views,
        # used by the noise SSE over all cells.
        self._fk_row_sq = []
        for v in self.views.views:
            if isinstance(v.matrix, SparseFullyKnownMatrix):
                sq = np.zeros(v.matrix.n_rows)
                np.add.at(sq, np.repeat(np.arange(v.matrix.n_rows),
                                        v.matrix.row_counts),
                          v.matrix.row_val ** 2)
                self._fk_row_sq.append(sq)
            elif isinstance(v.matrix, DenseMatrix):
                self._fk_row_sq.append((v.matrix.values ** 2).sum(axis=1))
            else:
                self._fk_row_sq.append(None)

    def _init_model(self):
        seed = self.cfg.seed
        k = self.k
        scale = 1.0 / math.sqrt(k)
        for mode, n in enumerate(self.views.mode_sizes):
            init = stream_for(seed, 0, mode, INIT_DRAW)
            self.factors[mode][:] = init.normals(k * n).reshape(k, n) * scale
            spec = self.priors[mode]
            if isinstance(spec, (NormalPriorSpec, MacauPriorSpec)):
                empty = np.zeros((k, 0))
                self.hypers[mode] = sample_hyper_normal(
                    empty, self.nw_hypers[mode], stream_for(seed, 0, mode, HYPER_DRAW))
            if isinstance(spec, MacauPriorSpec):
                side = self.side_info[mode]
                self.links[mode] = LinkState.initialize(side.dim, k,
                                                        spec.beta_precision)
            if isinstance(spec, SpikeSlabPriorSpec):
                state = SnSState.initialize(
                    n, k, stream_for(seed, 0, mode, SNS_HYPER_DRAW),
                    a=spec.a, b=spec.b, c=spec.c, d=spec.d)
                self._sns_z[mode][:] = state.z
                state.z = self._sns_z[mode]
                self.sns[mode] = state
                # Excluded components are exactly zero from the start.
                self.factors[mode].T[state.z == 0] = 0.0
        for vi, spec in enumerate(self.noise_specs):
            self.noise_states[vi] = NoiseState.initialize(
                spec, stream_for(seed, 0, 0, NOISE_DRAW + vi))

    # -- digest / snapshot interop -------------------------------------------

    def config_digest(self) -> str:
        """Digest of the model-relevant configuration and data.

        Execution parameters (threads, split threshold, paths, cadence)
        are excluded so that snapshots of equivalent runs agree.
        """
        if self._digest is not None:
            return self._digest
        import hashlib
        h = hashlib.sha256()

        def add(text):
            h.update(text.encode())
            h.update(b"\x00")

        def add_array(arr):
            h.update(np.ascontiguousarray(arr).tobytes())
            h.update(b"\x00")

        cfg = self.cfg
        add(f"k={cfg.num_latent} seed={cfg.seed} burnin={cfg.burnin} "
            f"nsamples={cfg.nsamples}")
        for mode, spec in enumerate(self.priors):
            add(f"prior{mode}={spec.describe()}")
        for vi, spec in enumerate(self.noise_specs):
            add(f"noise{vi}={spec.describe()}")
        for vi, v in enumerate(self.views.views):
            m = v.matrix
            add(f"view{vi}=kind:{_view_kind(m)} rows:{m.n_rows} cols:{m.n_cols} "
                f"colmode:{v.col_mode}")
            if isinstance(m, CompressedSparseMatrix):
                add_array(m.row_ptr)
                add_array(m.row_col)
                add_array(m.row_val)
            else:
                add_array(m.values)
        for mode in sorted(self.side_info):
            side = self.side_info[mode]
            f = side.features
            add(f"side{mode}=dense:{side.is_dense} rows:{f.n_rows} cols:{f.n_cols}")
            if side.is_dense:
                add_array(f.values)
            else:
                add_array(f.row_ptr)
                add_array(f.row_col)
                add_array(f.row_val)
        if self.test is not None:
            add(f"test={len(self.test)}")
            add_array(self.test.rows)
            add_array(self.test.cols)
            add_array(self.test.values)
        self._digest = h.hexdigest()
        return self._digest

    @property
    def model(self) -> LatentModel:
        return LatentModel(factors=self.factors, hypers=self.hypers,
                           links=self.links, sns=self.sns)

    def _apply_resume(self, state) -> int:
        """Load a snapshot payload; returns the iteration to continue after.

        Must run after _init_model so that prior states exist; array
        contents are then overwritten from the snapshot.
        """
        if state.config_digest != self.config_digest():
            raise SnapshotError(
                "snapshot was produced by a different configuration or data "
                "(config digest mismatch); refusing to resume"
            )
        total = self.cfg.burnin + self.cfg.nsamples
        if not 0 < state.iteration <= total:
            raise SnapshotError(
                f"snapshot iteration {state.iteration} outside run range 1..{total}"
            )
        if len(state.factors) != len(self.factors):
            raise SnapshotError(
                f"snapshot has {len(state.factors)} modes, expected "
                f"{len(self.factors)}"
            )
        for mode, fac in enumerate(state.factors):
            if fac.shape != self.factors[mode].shape:
                raise SnapshotError(
                    f"snapshot factor shape {fac.shape} does not match mode {mode}"
                )
            self.factors[mode][:] = fac
        for mode in range(self.views.n_modes):
            if state.hyper_mu[mode] is not None:
                self.hypers[mode] = ModeHyper(mu=state.hyper_mu[mode],
                                              lam=state.hyper_lambda[mode])
            if state.link_betas[mode] is not None:
                if self.links[mode] is None:
                    raise SnapshotError(
                        f"snapshot carries a link matrix for mode {mode} but the "
                        f"session prior has none"
                    )
                self.links[mode].beta = state.link_betas[mode]
            if state.sns_pi[mode] is not None:
                if self.sns[mode] is None:
                    raise SnapshotError(
                        f"snapshot carries spike-and-slab state for mode {mode} "
                        f"but the session prior has none"
                    )
                self.sns[mode].pi = state.sns_pi[mode]
                self.sns[mode].alpha_slab = state.sns_alpha_slab[mode]
                self._sns_z[mode][:] = state.sns_z[mode]
        for vi, alpha in enumerate(state.noise_alphas):
            self.noise_states[vi] = NoiseState(self.noise_specs[vi], alpha)
        if state.aggregate is not None and state.aggregate.count > 0:
            if self.test is None or len(self.test) != state.aggregate.mean.size:
                raise SnapshotError("snapshot aggregate does not match the test set")
            agg = PredictionAggregate(self.test)
            agg.mean[:] = state.aggregate.mean
            agg.m2[:] = state.aggregate.m2
            agg.count = state.aggregate.count
            self._resume_aggregate = agg
        else:
            self._resume_aggregate = None
        return state.iteration

    # -- task execution (runs in workers and inline) --------------------------

    def execute_task(self, task):
        kind = task[0]
        if kind == "entities":
            _, pp, lo, hi = task
            self._process_entities(pp, lo, hi)
            return None
        if kind == "partial":
            _, mode, view_idx, entity, clo, chi = task
            return self._entity_view_partials(mode, view_idx, entity, clo, chi)
        if kind == "sse":
            _, view_idx, lo, hi = task
            return self._sse_rows(view_idx, lo, hi)
        raise ValueError(f"unknown task kind {kind!r}")

    def _view_entries(self, mode: int, view_idx: int, entity: int):
        """Sparse (cols, vals) of one entity in one view, mode direction."""
        view = self.views.views[view_idx]
        if mode == 0:
            return view.matrix.row_entries(entity)
        return self._transposed[view_idx].row_entries(entity)

    def _entity_view_partials(self, mode, view_idx, entity, clo, chi):
        view = self.views.views[view_idx]
        other = self.factors[view.col_mode if mode == 0 else 0]
        cols, vals = self._view_entries(mode, view_idx, entity)
        if isinstance(view.matrix, SparseObservedMatrix):
            return chunk_partials(other, cols, vals, clo, chi)
        # fully-known sparse: the Gram supplies the precision part, only
        # the shift needs the listed entries.
        parts_a, parts_b = chunk_partials(other, cols, vals, clo, chi)
        return None, parts_b

    def _view_entity_terms(self, pp: PhaseParams, vc: ViewPhaseCtx, entity: int):
        """(A, b) contribution of one view to one entity, already scaled."""
        other = self.factors[vc.other_mode]
        if vc.kind == "dense":
            view = self.views.views[vc.view_idx]
            vals = view.matrix.row(entity) if pp.mode == 0 \
                else view.matrix.column(entity)
            return vc.alpha * vc.gram, vc.alpha * (other @ vals)
        cols, vals = self._view_entries(pp.mode, vc.view_idx, entity)
        if vc.kind == "fk":
            if cols.size:
                _, parts_b = chunk_partials(other, cols, vals, 0,
                                            chunk_count(cols.size))
                b = vc.alpha * np.sum(parts_b, axis=0)
            else:
                b = np.zeros(self.k)
            return vc.alpha * vc.gram, b
        if cols.size == 0:
            return np.zeros((self.k, self.k)), np.zeros(self.k)
        parts = chunk_partials(other, cols, vals, 0, chunk_count(cols.size))
        return reduce_partials(*parts, vc.alpha)

    def _assemble_entity_system(self, pp: PhaseParams, entity: int,
                                heavy_terms: dict | None = None):
        """Posterior precision and shift for one entity, views in order."""
        lam_star = pp.lam.copy()
        if pp.use_h0_matrix:
            h = self._prior_shift[pp.mode][:, entity].copy()
        else:
            h = pp.h0.copy()
        for vc in pp.views:
            if heavy_terms is not None and vc.view_idx in heavy_terms:
                a_v, b_v = heavy_terms[vc.view_idx]
            else:
                a_v, b_v = self._view_entity_terms(pp, vc, entity)
            lam_star += a_v
            h += b_v
        return lam_star, h

    def _normal_entity(self, pp: PhaseParams, entity: int,
                       heavy_terms: dict | None = None) -> np.ndarray:
        lam_star, h = self._assemble_entity_system(pp, entity, heavy_terms)
        stream = stream_for(self.cfg.seed, pp.iteration, pp.mode, entity)
        return sample_mvn_from_precision(stream, lam_star, h)

    def _sns_entity(self, pp: PhaseParams, entity: int):
        terms = []
        for vc in pp.views:
            other = self.factors[vc.other_mode]
            if vc.kind == "obs":
                cols, vals = self._view_entries(pp.mode, vc.view_idx, entity)
                terms.append(SnsObservedTerm(alpha=vc.alpha, vo=other[:, cols],
                                             vals=vals))
            elif vc.kind == "fk":
                cols, vals = self._view_entries(pp.mode, vc.view_idx, entity)
                b = other[:, cols] @ vals if cols.size else np.zeros(self.k)
                terms.append(SnsGramTerm(alpha=vc.alpha, gram=vc.gram, b=b))
            else:
                view = self.views.views[vc.view_idx]
                vals = view.matrix.row(entity) if pp.mode == 0 \
                    else view.matrix.column(entity)
                terms.append(SnsGramTerm(alpha=vc.alpha, gram=vc.gram,
                                         b=other @ vals))
        stream = stream_for(self.cfg.seed, pp.iteration, pp.mode, entity)
        return sample_latent_sns(pp.pi, pp.alpha_slab,
                                 self.factors[pp.mode][:, entity], terms, stream)

    def _process_entities(self, pp: PhaseParams, lo: int, hi: int):
        fac = self.factors[pp.mode]
        threshold = self.cfg.split_threshold
        counts = self._mode_counts[pp.mode]
        split = pp.prior_kind != "sns"
        for i in range(lo, hi):
            if split and counts[i] > threshold:
                continue  # handled through partial tasks
            if pp.prior_kind == "sns":
                u_new, z_new = self._sns_entity(pp, i)
                fac[:, i] = u_new
                self._sns_z[pp.mode][i] = z_new
            else:
                fac[:, i] = self._normal_entity(pp, i)

    def _sse_rows(self, view_idx: int, lo: int, hi: int) -> np.ndarray:
        """Per-row sums of squared residuals for one view's row range."""
        view = self.views.views[view_idx]
        u = self.factors[0]
        v = self.factors[view.col_mode]
        out = np.empty(hi - lo)
        if isinstance(view.matrix, SparseObservedMatrix):
            for i in range(lo, hi):
                cols, vals = view.matrix.row_entries(i)
                if cols.size:
                    r = vals - u[:, i] @ v[:, cols]
                    out[i - lo] = r @ r
                else:
                    out[i - lo] = 0.0
            return out
        # Fully known: all cells participate.  sum_j (r_ij - u.v_j)^2 =
        # u'Gu - 2 u'(sum r v) + sum r^2 with G the Gram of v.
        gram = gram_matrix(v)
        row_sq = self._fk_row_sq[view_idx]
        for i in range(lo, hi):
            ui = u[:, i]
            if isinstance(view.matrix, DenseMatrix):
                b = v @ view.matrix.row(i)
            else:
                cols, vals = view.matrix.row_entries(i)
                b = v[:, cols] @ vals if cols.size else np.zeros(self.k)
            out[i - lo] = float(ui @ (gram @ ui) - 2.0 * (ui @ b) + row_sq[i])
        return np.maximum(out, 0.0)

    # -- phase orchestration (main process only) -------------------------------

    def _touching_views(self, mode: int) -> list[int]:
        if mode == 0:
            return list(range(len(self.views.views)))
        return [vi for vi, v in enumerate(self.views.views) if v.col_mode == mode]

    def _phase_params(self, mode: int, iteration: int) -> PhaseParams:
        spec = self.priors[mode]
        view_ctxs = []
        for vi in self._touching_views(mode):
            view = self.views.views[vi]
            other_mode = view.col_mode if mode == 0 else 0
            kind = _view_kind(view.matrix)
            gram = None
            if kind in ("fk", "dense"):
                gram = gram_matrix(self.factors[other_mode])
            view_ctxs.append(ViewPhaseCtx(
                view_idx=vi, other_mode=other_mode, kind=kind,
                alpha=self.noise_states[vi].current_precision(), gram=gram))
        if isinstance(spec, SpikeSlabPriorSpec):
            state = self.sns[mode]
            return PhaseParams(mode=mode, iteration=iteration, prior_kind="sns",
                               views=view_ctxs, pi=state.pi,
                               alpha_slab=state.alpha_slab)
        hyper = self.hypers[mode]
        if isinstance(spec, MacauPriorSpec):
            return PhaseParams(mode=mode, iteration=iteration, prior_kind="macau",
                               views=view_ctxs, lam=hyper.lam, use_h0_matrix=True)
        return PhaseParams(mode=mode, iteration=iteration, prior_kind="normal",
                           views=view_ctxs, lam=hyper.lam,
                           h0=hyper.lam @ hyper.mu)

    def _sample_mode_hyper(self, mode: int, iteration: int) -> None:
        spec = self.priors[mode]
        seed = self.cfg.seed
        u = self.factors[mode]
        if isinstance(spec, SpikeSlabPriorSpec):
            state = self.sns[mode]
            pi, alpha_slab = sample_sns_hyper(
                state, u, stream_for(seed, iteration, mode, SNS_HYPER_DRAW))
            state.pi = pi
            state.alpha_slab = alpha_slab
            return
        if isinstance(spec, MacauPriorSpec):
            side = self.side_info[mode]
            link = self.links[mode]
            resid = u - side.matvec(link.beta).T
            hyper = sample_hyper_normal(
                resid, self.nw_hypers[mode],
                stream_for(seed, iteration, mode, HYPER_DRAW))
            link.beta = sample_link_matrix(
                u, hyper, side, link, stream_for(seed, iteration, mode, LINK_DRAW))
            self.hypers[mode] = hyper
            mhat = link_prior_means(side, link, hyper.mu)
            self._prior_shift[mode][:] = hyper.lam @ mhat
            return
        self.hypers[mode] = sample_hyper_normal(
            u, self.nw_hypers[mode], stream_for(seed, iteration, mode, HYPER_DRAW))

    def _entity_tasks(self, pp: PhaseParams) -> list:
        n = self.views.mode_sizes[pp.mode]
        counts = self._mode_counts[pp.mode]
        n_tasks = 1
        if self._engine.parallel:
            n_tasks = min(n, self._threads * 4)
        tasks = []
        if n_tasks <= 1:
            tasks.append(("entities", pp, 0, n))
        else:
            weights = counts + 8.0  # constant per-entity overhead
            cum = np.cumsum(weights)
            targets = np.linspace(cum[-1] / n_tasks, cum[-1], n_tasks)
            hi_list = np.searchsorted(cum, targets, side="left") + 1
            lo = 0
            for hi in hi_list:
                hi = int(min(max(hi, lo), n))
                if hi > lo:
                    tasks.append(("entities", pp, lo, hi))
                lo = hi
            if lo < n:
                tasks.append(("entities", pp, lo, n))
        return tasks

    def _heavy_entities(self, pp: PhaseParams) -> np.ndarray:
        if pp.prior_kind == "sns":
            return np.empty(0, dtype=np.int64)
        counts = self._mode_counts[pp.mode]
        return np.nonzero(counts > self.cfg.split_threshold)[0]

    def _update_mode(self, mode: int, iteration: int) -> None:
        """Resample hyperparameters, then every entity of one mode."""
        self._sample_mode_hyper(mode, iteration)
        pp = self._phase_params(mode, iteration)
        heavy = self._heavy_entities(pp)
        tasks = self._entity_tasks(pp)
        partial_specs = []   # (entity, view_idx, clo, chi) per partial task
        for entity in heavy:
            for vc in pp.views:
                if vc.kind == "dense":
                    continue
                cols, _ = self._view_entries(mode, vc.view_idx, int(entity))
                n_chunks = chunk_count(cols.size)
                if n_chunks < 2 or not self._engine.parallel:
                    continue
                group = max(1, -(-n_chunks // (self._threads * 2)))
                for clo in range(0, n_chunks, group):
                    chi = min(n_chunks, clo + group)
                    partial_specs.append((int(entity), vc.view_idx, clo, chi))
        partial_tasks = [("partial", mode, vi, e, clo, chi)
                         for e, vi, clo, chi in partial_specs]
        results = self._engine.execute(tasks + partial_tasks)
        partial_results = results[len(tasks):]

        # Assemble split accumulations per (entity, view) in chunk order,
        # then finish each heavy entity with the same canonical reduction
        # the inline path uses.
        by_entity_view: dict[tuple[int, int], list] = {}
        for spec_, res in zip(partial_specs, partial_results):
            e, vi, clo, chi = spec_
            by_entity_view.setdefault((e, vi), []).append((clo, res))
        fac = self.factors[mode]
        for entity in heavy:
            heavy_terms = {}
            for vc in pp.views:
                key = (int(entity), vc.view_idx)
                if key not in by_entity_view:
                    heavy_terms[vc.view_idx] = self._view_entity_terms(
                        pp, vc, int(entity))
                    continue
                groups = sorted(by_entity_view[key], key=lambda g: g[0])
                b_parts = np.concatenate([g[1][1] for g in groups], axis=0)
                if vc.kind == "obs":
                    a_parts = np.concatenate([g[1][0] for g in groups], axis=0)
                    heavy_terms[vc.view_idx] = reduce_partials(
                        a_parts, b_parts, vc.alpha)
                else:
                    heavy_terms[vc.view_idx] = (
                        vc.alpha * vc.gram,
                        vc.alpha * np.sum(b_parts, axis=0),
                    )
            fac[:, int(entity)] = self._normal_entity(pp, int(entity), heavy_terms)

    def update_mode(self, mode: int, iteration: int) -> np.ndarray:
        """Public single-mode update; returns the updated factor matrix."""
        self._update_mode(mode, iteration)
        return self.factors[mode]

    def _update_noise(self, iteration: int) -> None:
        for vi, state in enumerate(self.noise_states):
            if not state.adaptive:
                continue
            view = self.views.views[vi]
            n_rows = view.matrix.n_rows
            n_tasks = 1
            if self._engine.parallel:
                n_tasks = min(n_rows, self._threads * 2)
            bounds = np.linspace(0, n_rows, n_tasks + 1).astype(int)
            tasks = [("sse", vi, int(lo), int(hi))
                     for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
            parts = self._engine.execute(tasks)
            per_row = np.concatenate(parts) if parts else np.zeros(0)
            sse = float(np.sum(per_row))
            if isinstance(view.matrix, SparseObservedMatrix):
                n_obs = view.matrix.nnz
            else:
                n_obs = view.matrix.n_rows * view.matrix.n_cols
            update_precision(state, sse, n_obs,
                             stream_for(self.cfg.seed, iteration, 0,
                                        NOISE_DRAW + vi))

    def _test_predictions(self) -> np.ndarray:
        v0 = self.views.views[0]
        u = self.factors[0]
        v = self.factors[v0.col_mode]
        return np.einsum("kn,kn->n", u[:, self.test.rows], v[:, self.test.cols])

    def _check_finite(self, iteration: int) -> None:
        for mode, fac in enumerate(self.factors):
            if not np.isfinite(fac).all():
                bad = np.argwhere(~np.isfinite(fac))
                entity = int(bad[0][1])
                raise NumericalError(
                    f"non-finite latent value at iteration {iteration}, "
                    f"mode {mode}, entity {entity}"
                )
            state = self.sns[mode]
            if state is not None:
                masked = fac.T[state.z == 0]
                if masked.size and np.any(masked != 0.0):
                    raise NumericalError(
                        f"spike-and-slab invariant violated at iteration "
                        f"{iteration}, mode {mode}: excluded component is nonzero"
                    )

    # -- the main loop ---------------------------------------------------------

    def run(self, resume=None, progress=None) -> RunResult:
        cfg = self.cfg
        total = cfg.burnin + cfg.nsamples
        with threadpool_limits(limits=1):
            self._init_model()
            first_iteration = 1
            aggregate = PredictionAggregate(self.test) if self.test is not None \
                else None
            if resume is not None:
                last_done = self._apply_resume(resume)
                first_iteration = last_done + 1
                if self._resume_aggregate is not None:
                    aggregate = self._resume_aggregate
            self._engine.start()
            trace: list[TraceRow] = []
            iter_seconds: list[float] = []
            sns_incl_sum = {m: np.zeros(self.k)
                            for m, s in enumerate(self.sns) if s is not None}
            sns_incl_count = 0
            csv_file = None
            try:
                if cfg.csv_trace:
                    csv_file = open(cfg.csv_trace, "w")
                    alpha_names = ",".join(
                        f"alpha{v}" for v in range(len(self.views.views)))
                    csv_file.write(f"iteration,phase,rmse,{alpha_names}\n")
                order = self.views.update_order()
                for it in range(first_iteration, total + 1):
                    t0 = time.perf_counter()
                    for mode in order:
                        self._update_mode(mode, it)
                    self._update_noise(it)
                    self._check_finite(it)
                    phase = "burnin" if it <= cfg.burnin else "sample"
                    rmse = float("nan")
                    if self.test is not None and len(self.test):
                        preds = self._test_predictions()
                        if phase == "sample":
                            aggregate.update(preds)
                            rmse = aggregate.rmse()
                        else:
                            err = preds - self.test.values
                            rmse = math.sqrt(float(np.mean(err * err)))
                    if phase == "sample":
                        for m in sns_incl_sum:
                            sns_incl_sum[m] += self.sns[m].z.mean(axis=0)
                        sns_incl_count += 1
                    row = TraceRow(
                        iteration=it, phase=phase, rmse=rmse,
                        alphas=tuple(s.current_precision()
                                     for s in self.noise_states))
                    trace.append(row)
                    if csv_file is not None:
                        csv_file.write(row.csv() + "\n")
                    iter_seconds.append(time.perf_counter() - t0)
                    if progress is not None:
                        progress(row)
                    if (cfg.checkpoint_every > 0 and cfg.save_prefix
                            and it % cfg.checkpoint_every == 0 and it < total):
                        self._write_snapshot(
                            os.path.join(cfg.save_prefix, f"checkpoint_{it:06d}"),
                            it, aggregate, rmse)
                if cfg.save_prefix:
                    self._write_snapshot(os.path.join(cfg.save_prefix, "final"),
                                         total, aggregate,
                                         trace[-1].rmse if trace else float("nan"))
            finally:
                if csv_file is not None:
                    csv_file.close()
                self._engine.shutdown()
            final_rmse = trace[-1].rmse if trace else float("nan")
            sns_inclusion = {
                m: (s / max(sns_incl_count, 1)) for m, s in sns_incl_sum.items()
            }
            return RunResult(
                final_rmse=final_rmse, aggregate=aggregate, trace=trace,
                model=self.model,
                noise_alphas=[s.current_precision() for s in self.noise_states],
                sns_inclusion=sns_inclusion, iter_seconds=iter_seconds,
                test_overlap=self.test_overlap)

    def _write_snapshot(self, path: str, iteration: int, aggregate, rmse) -> None:
        from .snapshot import write_snapshot
        write_snapshot(self, path, iteration, aggregate, rmse)


def rmse_of(aggregate: PredictionAggregate, test: TestSet) -> float:
    """RMSE of aggregate means against a test set (spec surface)."""
    if len(test) == 0:
        raise DataError("empty test set")
    if aggregate.count < 1:
        raise DataError("no samples collected yet")
    err = aggregate.mean - test.values
    return math.sqrt(float(np.mean(err * err)))


def run(cfg: SessionConfig, views, priors, noise, side_info=None, test=None,
        resume=None, progress=None) -> RunResult:
    """Build a session and execute the full Gibbs run."""
    session = Session(cfg, views, priors, noise, side_info=side_info, test=test)
    return session.run(resume=resume, progress=progress)
