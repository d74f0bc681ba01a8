"""Kernel and scaling benchmarks, reported as CSV lines.

Three kernels are measured: the SPD Cholesky factorization, the
precision/shift accumulation (with a threshold sweep showing that task
splitting changes timing but never the numbers), and full Gibbs
iterations across a list of thread counts with speedup relative to one
thread.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .linalg import (
    chunk_count,
    chunk_partials,
    cholesky_spd,
    reduce_partials,
)
from .noise import FixedNoise
from .priors import NormalPriorSpec
from .rng import INIT_DRAW, stream_for
from .sampler import Session, SessionConfig, ViewSet
from .data import SparseObservedMatrix

KERNELS = ("accumulate", "cholesky", "full-iteration")


@dataclass
class BenchRow:
    kernel: str
    params: str
    reps: int
    min_s: float
    median_s: float
    throughput: float
    extra: str = ""

    def csv(self) -> str:
        base = (f"{self.kernel},{self.params},{self.reps},"
                f"{self.min_s:.6g},{self.median_s:.6g},{self.throughput:.6g}")
        return base + (f",{self.extra}" if self.extra else ",")


CSV_HEADER = "kernel,params,reps,min_s,median_s,updates_per_s,extra"


def _timed(fn, reps: int) -> tuple[float, float]:
    times = np.empty(reps)
    for r in range(reps):
        t0 = time.perf_counter()
        fn(r)
        times[r] = time.perf_counter() - t0
    return float(times.min()), float(np.median(times))


def bench_cholesky(k: int, reps: int, seed: int = 0) -> list[BenchRow]:
    stream = stream_for(seed, 0, 0, INIT_DRAW)
    mats = []
    for _ in range(reps):
        m = stream.normals(k * k).reshape(k, k)
        mats.append(m @ m.T + np.eye(k))

    min_s, median_s = _timed(lambda r: cholesky_spd(mats[r]), reps)
    return [BenchRow(kernel="cholesky", params=f"k={k}", reps=reps,
                     min_s=min_s, median_s=median_s,
                     throughput=1.0 / median_s if median_s > 0 else float("inf"))]


def _accumulate_split(other, cols, vals, alpha, threshold):
    """Accumulate the way the sampler schedules it for a given threshold."""
    n = cols.size
    n_chunks = chunk_count(n)
    if n <= threshold or n_chunks < 2:
        parts = chunk_partials(other, cols, vals, 0, n_chunks)
        return reduce_partials(*parts, alpha)
    # Split path: chunk groups evaluated separately, recombined in order.
    a_groups, b_groups = [], []
    for clo in range(n_chunks):
        a_p, b_p = chunk_partials(other, cols, vals, clo, clo + 1)
        a_groups.append(a_p)
        b_groups.append(b_p)
    return reduce_partials(np.concatenate(a_groups, axis=0),
                           np.concatenate(b_groups, axis=0), alpha)


def bench_accumulate(entries: int, k: int, thresholds: list[int], reps: int,
                     seed: int = 0) -> list[BenchRow]:
    stream = stream_for(seed, 0, 0, INIT_DRAW)
    other = stream.normals(k * entries).reshape(k, entries)
    cols = np.arange(entries, dtype=np.int64)
    vals = stream.normals(entries)
    rows = []
    reference = None
    for threshold in thresholds:
        out = {}

        def step(_r, th=threshold, out=out):
            out["ab"] = _accumulate_split(other, cols, vals, 1.0, th)

        min_s, median_s = _timed(step, reps)
        a, b = out["ab"]
        if reference is None:
            reference = (a, b)
            identical = True
        else:
            identical = (np.array_equal(reference[0], a)
                         and np.array_equal(reference[1], b))
        rows.append(BenchRow(
            kernel="accumulate",
            params=f"entries={entries};k={k};threshold={threshold}",
            reps=reps, min_s=min_s, median_s=median_s,
            throughput=entries / median_s if median_s > 0 else float("inf"),
            extra=f"identical={'yes' if identical else 'NO'}"))
    return rows


def synthetic_sparse(n_rows: int, n_cols: int, nnz: int,
                     seed: int = 0) -> SparseObservedMatrix:
    """Random sparse matrix with exactly nnz distinct observed cells."""
    rng = np.random.default_rng(seed)
    total = n_rows * n_cols
    if nnz > total:
        raise ConfigError(f"cannot place {nnz} entries in a {n_rows}x{n_cols} matrix")
    seen = np.empty(0, dtype=np.int64)
    while seen.size < nnz:
        need = nnz - seen.size
        cand = rng.integers(0, total, size=int(need * 1.2) + 16, dtype=np.int64)
        seen = np.unique(np.concatenate([seen, cand]))[:nnz] if seen.size \
            else np.unique(cand)[:nnz]
    rows, cols = np.divmod(seen, n_cols)
    vals = rng.standard_normal(nnz)
    return SparseObservedMatrix.from_arrays(n_rows, n_cols, rows, cols, vals)


def bench_full_iteration(n_rows: int, n_cols: int, nnz: int, k: int,
                         threads_list: list[int], reps: int,
                         seed: int = 0,
                         split_threshold: int = 4096) -> list[BenchRow]:
    matrix = synthetic_sparse(n_rows, n_cols, nnz, seed=seed)
    views = ViewSet.single(matrix)
    baseline = None
    reference_digest = None
    rows = []
    for threads in threads_list:
        cfg = SessionConfig(num_latent=k, burnin=0, nsamples=reps, seed=seed,
                            threads=threads, split_threshold=split_threshold)
        session = Session(cfg, views, NormalPriorSpec(), FixedNoise(alpha=5.0))
        result = session.run()
        med = float(np.median(result.iter_seconds))
        mn = float(np.min(result.iter_seconds))
        digest = hashlib.sha256()
        for fac in result.model.factors:
            digest.update(np.ascontiguousarray(fac).tobytes())
        digest = digest.hexdigest()
        if threads == 1:
            baseline = med
        if reference_digest is None:
            reference_digest = digest
        identical = digest == reference_digest
        speedup = baseline / med if baseline else float("nan")
        updates = (n_rows + n_cols) / med if med > 0 else float("inf")
        rows.append(BenchRow(
            kernel="full-iteration",
            params=f"rows={n_rows};cols={n_cols};nnz={nnz};k={k};threads={threads}",
            reps=reps, min_s=mn, median_s=med, throughput=updates,
            extra=f"speedup={speedup:.3f};identical={'yes' if identical else 'NO'}"))
    return rows
