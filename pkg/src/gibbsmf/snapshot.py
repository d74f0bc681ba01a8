"""Text snapshots of a running session: write, verify, resume.

A snapshot is a directory holding a key=value manifest plus one Matrix
Market array file per factor matrix, hyperparameter set, link matrix and
spike-and-slab state, and a CSV with the streaming test-cell aggregate.
All floats are rendered with 17 significant digits, so a write-then-read
round trip reproduces every array bit-exactly and a resumed run continues
identically to an uninterrupted one.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import SnapshotError
from .mmio import read_array, write_array

SNAPSHOT_VERSION = 1
MANIFEST = "manifest.txt"
AGGREGATE = "aggregate.csv"


@dataclass
class AggregateArrays:
    rows: np.ndarray
    cols: np.ndarray
    truth: np.ndarray
    mean: np.ndarray
    m2: np.ndarray
    count: int


@dataclass
class SnapshotState:
    """Everything read back from a snapshot directory."""

    iteration: int
    config_digest: str
    factors: list[np.ndarray]
    hyper_mu: list[np.ndarray | None]
    hyper_lambda: list[np.ndarray | None]
    link_betas: list[np.ndarray | None]
    sns_pi: list[np.ndarray | None]
    sns_alpha_slab: list[np.ndarray | None]
    sns_z: list[np.ndarray | None]
    noise_alphas: list[float]
    aggregate: AggregateArrays | None
    manifest: dict = field(default_factory=dict)


def _write_manifest(path: str, pairs: list[tuple[str, str]]) -> None:
    with open(path, "w") as fh:
        for key, value in pairs:
            fh.write(f"{key}={value}\n")


def _read_manifest(path: str) -> dict:
    manifest = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise SnapshotError(f"cannot read snapshot manifest {path}: {exc}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "=" not in line:
                raise SnapshotError(
                    f"{path}:{lineno}: malformed manifest line {line!r}; "
                    f"expected key=value"
                )
            key, value = line.split("=", 1)
            manifest[key] = value
    return manifest


def write_snapshot(session, path: str, iteration: int, aggregate,
                   rmse: float) -> None:
    """Persist the session state after `iteration` into a directory."""
    os.makedirs(path, exist_ok=True)
    views = session.views
    pairs = [
        ("format_version", str(SNAPSHOT_VERSION)),
        ("iteration", str(iteration)),
        ("seed", str(session.cfg.seed)),
        ("num_latent", str(session.cfg.num_latent)),
        ("burnin", str(session.cfg.burnin)),
        ("nsamples", str(session.cfg.nsamples)),
        ("rmse", repr(float(rmse))),
        ("config_digest", session.config_digest()),
        ("n_modes", str(views.n_modes)),
        ("n_views", str(len(views.views))),
        ("mode_sizes", ",".join(str(n) for n in views.mode_sizes)),
    ]
    for mode, spec in enumerate(session.priors):
        pairs.append((f"prior{mode}", spec.describe()))
    for vi, spec in enumerate(session.noise_specs):
        pairs.append((f"noise{vi}", spec.describe()))
        pairs.append((f"noise_alpha{vi}",
                      repr(float(session.noise_states[vi].current_precision()))))
    has_aggregate = aggregate is not None and aggregate.count > 0
    pairs.append(("sample_count", str(aggregate.count if has_aggregate else 0)))
    pairs.append(("has_aggregate", "1" if has_aggregate else "0"))

    for mode in range(views.n_modes):
        write_array(os.path.join(path, f"factors_mode{mode}.mtx"),
                    session.factors[mode])
        hyper = session.hypers[mode]
        if hyper is not None:
            write_array(os.path.join(path, f"hyper_mu_mode{mode}.mtx"), hyper.mu)
            write_array(os.path.join(path, f"hyper_lambda_mode{mode}.mtx"),
                        hyper.lam)
        link = session.links[mode]
        if link is not None:
            write_array(os.path.join(path, f"link_beta_mode{mode}.mtx"), link.beta)
        sns = session.sns[mode]
        if sns is not None:
            write_array(os.path.join(path, f"sns_pi_mode{mode}.mtx"), sns.pi)
            write_array(os.path.join(path, f"sns_alpha_slab_mode{mode}.mtx"),
                        sns.alpha_slab)
            write_array(os.path.join(path, f"sns_z_mode{mode}.mtx"),
                        sns.z.astype(np.float64))
    if has_aggregate:
        with open(os.path.join(path, AGGREGATE), "w") as fh:
            fh.write("i,j,truth,mean,m2\n")
            for i, j, t, m, s in zip(aggregate.rows, aggregate.cols,
                                     aggregate.truth, aggregate.mean,
                                     aggregate.m2):
                fh.write(f"{int(i)},{int(j)},{t:.17g},{m:.17g},{s:.17g}\n")
    _write_manifest(os.path.join(path, MANIFEST), pairs)


def _require(manifest: dict, key: str, path: str) -> str:
    if key not in manifest:
        raise SnapshotError(f"snapshot {path} manifest is missing key {key!r}")
    return manifest[key]


def _load_array(path: str, name: str) -> np.ndarray:
    full = os.path.join(path, name)
    if not os.path.exists(full):
        raise SnapshotError(f"snapshot {path} is missing component file {name}")
    return read_array(full)


def read_snapshot(path: str) -> SnapshotState:
    """Load a snapshot directory into plain arrays, verifying its layout."""
    manifest = _read_manifest(os.path.join(path, MANIFEST))
    version = int(_require(manifest, "format_version", path))
    if version != SNAPSHOT_VERSION:
        raise SnapshotError(
            f"snapshot {path} has format version {version}, "
            f"this build reads version {SNAPSHOT_VERSION}"
        )
    n_modes = int(_require(manifest, "n_modes", path))
    n_views = int(_require(manifest, "n_views", path))
    iteration = int(_require(manifest, "iteration", path))
    digest = _require(manifest, "config_digest", path)

    factors, hyper_mu, hyper_lam = [], [], []
    link_betas, sns_pi, sns_alpha, sns_z = [], [], [], []
    for mode in range(n_modes):
        factors.append(_load_array(path, f"factors_mode{mode}.mtx"))
        prior = _require(manifest, f"prior{mode}", path)
        kind = prior.split(":", 1)[0]
        if kind in ("normal", "macau"):
            hyper_mu.append(_load_array(path, f"hyper_mu_mode{mode}.mtx").ravel())
            hyper_lam.append(_load_array(path, f"hyper_lambda_mode{mode}.mtx"))
        else:
            hyper_mu.append(None)
            hyper_lam.append(None)
        if kind == "macau":
            link_betas.append(_load_array(path, f"link_beta_mode{mode}.mtx"))
        else:
            link_betas.append(None)
        if kind == "spikeandslab":
            sns_pi.append(_load_array(path, f"sns_pi_mode{mode}.mtx").ravel())
            sns_alpha.append(
                _load_array(path, f"sns_alpha_slab_mode{mode}.mtx").ravel())
            z = _load_array(path, f"sns_z_mode{mode}.mtx")
            sns_z.append(z.astype(np.uint8))
        else:
            sns_pi.append(None)
            sns_alpha.append(None)
            sns_z.append(None)

    noise_alphas = [float(_require(manifest, f"noise_alpha{vi}", path))
                    for vi in range(n_views)]

    aggregate = None
    if manifest.get("has_aggregate") == "1":
        agg_path = os.path.join(path, AGGREGATE)
        if not os.path.exists(agg_path):
            raise SnapshotError(f"snapshot {path} is missing component file "
                                f"{AGGREGATE}")
        rows, cols, truth, mean, m2 = [], [], [], [], []
        with open(agg_path) as fh:
            header = fh.readline().strip()
            if header != "i,j,truth,mean,m2":
                raise SnapshotError(
                    f"snapshot {path} has an unrecognized aggregate header "
                    f"{header!r}"
                )
            for line in fh:
                fields = line.strip().split(",")
                if len(fields) != 5:
                    raise SnapshotError(
                        f"snapshot {path} aggregate has a malformed row {line!r}"
                    )
                rows.append(int(fields[0]))
                cols.append(int(fields[1]))
                truth.append(float(fields[2]))
                mean.append(float(fields[3]))
                m2.append(float(fields[4]))
        aggregate = AggregateArrays(
            rows=np.array(rows, dtype=np.int64),
            cols=np.array(cols, dtype=np.int64),
            truth=np.array(truth), mean=np.array(mean), m2=np.array(m2),
            count=int(_require(manifest, "sample_count", path)))

    return SnapshotState(
        iteration=iteration, config_digest=digest, factors=factors,
        hyper_mu=hyper_mu, hyper_lambda=hyper_lam, link_betas=link_betas,
        sns_pi=sns_pi, sns_alpha_slab=sns_alpha, sns_z=sns_z,
        noise_alphas=noise_alphas, aggregate=aggregate, manifest=manifest)
