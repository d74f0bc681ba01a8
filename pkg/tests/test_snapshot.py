import os

import numpy as np
import pytest

from gibbsmf.errors import SnapshotError
from gibbsmf.noise import AdaptiveNoise
from gibbsmf.priors import MacauPriorSpec, NormalPriorSpec, SpikeSlabPriorSpec
from gibbsmf.data import DenseMatrix, SideInfo
from gibbsmf.sampler import Session, SessionConfig, run
from gibbsmf.snapshot import read_snapshot, write_snapshot

from conftest import make_low_rank


def dir_bytes(path):
    """Map of file name -> content bytes for a snapshot directory."""
    out = {}
    for name in sorted(os.listdir(path)):
        with open(os.path.join(path, name), "rb") as fh:
            out[name] = fh.read()
    return out


def build_inputs(seed=21):
    matrix, test, (u_true, _) = make_low_rank(
        30, 20, 2, density=0.35, noise_std=0.1, seed=seed, n_test=40)
    side = SideInfo(DenseMatrix(u_true.T.copy()))
    priors = [MacauPriorSpec(beta_precision=1.0), SpikeSlabPriorSpec()]
    return matrix, test, side, priors


def make_cfg(tmp_path, tag, **kw):
    base = dict(num_latent=2, burnin=3, nsamples=5, seed=77)
    base.update(kw)
    return SessionConfig(save_prefix=str(tmp_path / tag),
                         csv_trace=str(tmp_path / f"{tag}.csv"), **base)


def test_snapshot_read_write_round_trip_bytes(tmp_path):
    matrix, test, side, priors = build_inputs()
    cfg = make_cfg(tmp_path, "a")
    res = run(cfg, matrix, priors, AdaptiveNoise(), side_info={0: side},
              test=test)
    final = os.path.join(cfg.save_prefix, "final")
    state = read_snapshot(final)

    # Rehydrate a fresh session from the snapshot and write it again: every
    # component file must round-trip byte-identically.
    cfg2 = SessionConfig(num_latent=2, burnin=3, nsamples=5, seed=77)
    session = Session(cfg2, matrix, priors, AdaptiveNoise(),
                      side_info={0: side}, test=test)
    session._init_model()
    session._apply_resume(state)
    agg = session._resume_aggregate
    rewritten = str(tmp_path / "rewritten")
    write_snapshot(session, rewritten, state.iteration, agg,
                   float(state.manifest["rmse"]))
    assert dir_bytes(final) == dir_bytes(rewritten)


def test_resume_reproduces_uninterrupted_run(tmp_path):
    matrix, test, side, priors = build_inputs()

    full_cfg = make_cfg(tmp_path, "full", burnin=3, nsamples=7)
    full = run(full_cfg, matrix, priors, AdaptiveNoise(), side_info={0: side},
               test=test)

    part_cfg = make_cfg(tmp_path, "part", burnin=3, nsamples=7,
                        checkpoint_every=5)
    run(part_cfg, matrix, priors, AdaptiveNoise(), side_info={0: side},
        test=test)
    checkpoint = os.path.join(part_cfg.save_prefix, "checkpoint_000005")
    state = read_snapshot(checkpoint)
    assert state.iteration == 5

    resumed_cfg = make_cfg(tmp_path, "resumed", burnin=3, nsamples=7)
    resumed = run(resumed_cfg, matrix, priors, AdaptiveNoise(),
                  side_info={0: side}, test=test, resume=state)

    # Trace: prefix from the first run plus the resumed suffix equals the
    # uninterrupted trace, byte for byte.
    full_rows = [r.csv() for r in full.trace]
    prefix = full_rows[:5]
    suffix = [r.csv() for r in resumed.trace]
    assert [r.iteration for r in resumed.trace] == list(range(6, 11))
    assert prefix + suffix == full_rows
    for a, b in zip(full.model.factors, resumed.model.factors):
        assert np.array_equal(a, b)
    assert dir_bytes(os.path.join(full_cfg.save_prefix, "final")) \
        == dir_bytes(os.path.join(resumed_cfg.save_prefix, "final"))


def test_tampered_digest_refuses_resume(tmp_path):
    matrix, test, side, priors = build_inputs()
    cfg = make_cfg(tmp_path, "t")
    run(cfg, matrix, priors, AdaptiveNoise(), side_info={0: side}, test=test)
    final = os.path.join(cfg.save_prefix, "final")
    manifest = os.path.join(final, "manifest.txt")
    text = open(manifest).read().replace("config_digest=", "config_digest=00")
    open(manifest, "w").write(text)
    state = read_snapshot(final)
    session = Session(SessionConfig(num_latent=2, burnin=3, nsamples=5, seed=77),
                      matrix, priors, AdaptiveNoise(), side_info={0: side},
                      test=test)
    session._init_model()
    with pytest.raises(SnapshotError, match="digest mismatch"):
        session._apply_resume(state)


def test_changed_config_refuses_resume(tmp_path):
    matrix, test, side, priors = build_inputs()
    cfg = make_cfg(tmp_path, "c")
    run(cfg, matrix, priors, AdaptiveNoise(), side_info={0: side}, test=test)
    state = read_snapshot(os.path.join(cfg.save_prefix, "final"))
    other = Session(SessionConfig(num_latent=2, burnin=3, nsamples=5, seed=78),
                    matrix, priors, AdaptiveNoise(), side_info={0: side},
                    test=test)
    other._init_model()
    with pytest.raises(SnapshotError, match="digest mismatch"):
        other._apply_resume(state)


def test_version_mismatch_rejected(tmp_path):
    matrix, test, side, priors = build_inputs()
    cfg = make_cfg(tmp_path, "v")
    run(cfg, matrix, priors, AdaptiveNoise(), side_info={0: side}, test=test)
    final = os.path.join(cfg.save_prefix, "final")
    manifest = os.path.join(final, "manifest.txt")
    text = open(manifest).read().replace("format_version=1", "format_version=9")
    open(manifest, "w").write(text)
    with pytest.raises(SnapshotError, match="format version 9"):
        read_snapshot(final)


def test_missing_component_file_rejected(tmp_path):
    matrix, test, side, priors = build_inputs()
    cfg = make_cfg(tmp_path, "m")
    run(cfg, matrix, priors, AdaptiveNoise(), side_info={0: side}, test=test)
    final = os.path.join(cfg.save_prefix, "final")
    os.remove(os.path.join(final, "factors_mode1.mtx"))
    with pytest.raises(SnapshotError, match="factors_mode1.mtx"):
        read_snapshot(final)


def test_snapshots_identical_across_threads(tmp_path):
    matrix, test, side, priors = build_inputs()
    dirs = []
    for threads in (1, 2):
        cfg = make_cfg(tmp_path, f"th{threads}", threads=threads)
        run(cfg, matrix, priors, AdaptiveNoise(), side_info={0: side},
            test=test)
        dirs.append(os.path.join(cfg.save_prefix, "final"))
    assert dir_bytes(dirs[0]) == dir_bytes(dirs[1])
