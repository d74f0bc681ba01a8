"""Command-line interface: train, predict, bench.

Every train flag has a config-file twin: `--num-latent 8` on the command
line is `num_latent = 8` in the file, and a flag always overrides the
file.  Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import math
import sys
import time

from .bench import (
    CSV_HEADER,
    KERNELS,
    bench_accumulate,
    bench_cholesky,
    bench_full_iteration,
)
from .data import SideInfo, TestSet
from .errors import ConfigError, DataError, GibbsMfError, NumericalError
from .mmio import read_matrix_market
from .noise import parse_noise_spec
from .presets import PRESET_NAMES, expand_preset
from .priors import MacauPriorSpec, NormalPriorSpec, SpikeSlabPriorSpec
from .sampler import SessionConfig, ViewData, ViewSet, run
from .snapshot import read_snapshot

PRIOR_CHOICES = ("normal", "macau", "spikeandslab")

# One table drives the train parser and the config-file schema, so the
# flag set and the key set cannot drift apart.
TRAIN_OPTIONS = [
    ("--train", dict(metavar="PATH", help="training matrix (Matrix Market)")),
    ("--test", dict(metavar="PATH", help="held-out test cells (coordinate file)")),
    ("--preset", dict(choices=PRESET_NAMES, help="algorithm preset")),
    ("--view", dict(metavar="PATH", action="append",
                    help="additional training matrix sharing the row mode "
                         "(repeatable)")),
    ("--prior-rows", dict(choices=PRIOR_CHOICES, help="prior for the row mode")),
    ("--prior-cols", dict(choices=PRIOR_CHOICES,
                          help="prior for the column mode(s)")),
    ("--side-rows", dict(metavar="PATH", help="side information for rows")),
    ("--side-cols", dict(metavar="PATH",
                         help="side information for the first view's columns")),
    ("--beta-precision", dict(type=float, metavar="LAMBDA",
                              help="link-matrix regularization precision "
                                   "(default 1.0)")),
    ("--noise", dict(metavar="SPEC",
                     help="noise model: fixed:<alpha> or adaptive:<a0>:<b0>")),
    ("--num-latent", dict(type=int, metavar="K", help="latent dimension")),
    ("--burnin", dict(type=int, metavar="N", help="burn-in iterations")),
    ("--nsamples", dict(type=int, metavar="N", help="post-burn-in samples")),
    ("--seed", dict(type=int, metavar="U64", help="random seed")),
    ("--threads", dict(type=int, metavar="N", help="worker count (0 = auto)")),
    ("--split-threshold", dict(type=int, metavar="N",
                               help="entry count above which one entity's "
                                    "accumulation is split into subtasks")),
    ("--save-prefix", dict(metavar="DIR", help="directory for snapshots")),
    ("--checkpoint-every", dict(type=int, metavar="N",
                                help="snapshot cadence in iterations (0 = off)")),
    ("--csv-trace", dict(metavar="PATH", help="write the per-iteration trace CSV")),
    ("--resume", dict(metavar="DIR", help="resume from a snapshot directory "
                                          "(data flags must be repeated)")),
    ("--fully-known", dict(action="store_const", const=True,
                           help="treat coordinate training files as fully "
                                "known (absent cells are zeros)")),
]

TRAIN_DEFAULTS = {
    "num_latent": 16,
    "burnin": 50,
    "nsamples": 100,
    "seed": 0,
    "threads": 1,
    "split_threshold": 4096,
    "checkpoint_every": 0,
    "beta_precision": 1.0,
    "fully_known": False,
    "view": [],
}


def config_keys() -> dict[str, dict]:
    """Config-file key -> option kwargs, derived from the flag table."""
    return {flag[2:].replace("-", "_"): kwargs for flag, kwargs in TRAIN_OPTIONS}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gibbsmf",
        description="Bayesian matrix factorization by Gibbs sampling.")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run a factorization")
    train.add_argument("--config", metavar="PATH",
                       help="config file with key = value lines")
    for flag, kwargs in TRAIN_OPTIONS:
        train.add_argument(flag, default=None, **kwargs)

    predict = sub.add_parser("predict", help="answer queries from a snapshot")
    predict.add_argument("--model", metavar="DIR", required=True,
                         help="snapshot directory")
    predict.add_argument("--queries", metavar="PATH", required=True,
                         help="CSV of 1-based i,j query cells")

    bench = sub.add_parser("bench", help="time kernels and scaling")
    bench.add_argument("--kernel", choices=KERNELS, required=True)
    bench.add_argument("--num-latent", type=int, default=32)
    bench.add_argument("--reps", type=int, default=None,
                       help="repetitions (default depends on the kernel)")
    bench.add_argument("--rows", type=int, default=1000)
    bench.add_argument("--cols", type=int, default=1000)
    bench.add_argument("--nnz", type=int, default=100_000)
    bench.add_argument("--entries", type=int, default=2048,
                       help="entry count for the accumulate kernel")
    bench.add_argument("--thresholds", default="1,4096",
                       help="comma list of split thresholds for accumulate")
    bench.add_argument("--threads", default="1,2,4,8",
                       help="comma list of thread counts for full-iteration")
    bench.add_argument("--split-threshold", type=int, default=4096)
    bench.add_argument("--seed", type=int, default=0)
    return parser


# ---------------------------------------------------------------------------
# config files


def _convert_value(key: str, raw: str, kwargs: dict):
    if kwargs.get("action") == "store_const":
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"key {key!r} expects a boolean, got {raw!r}")
    typ = kwargs.get("type", str)
    try:
        return typ(raw.strip())
    except ValueError:
        raise ConfigError(f"key {key!r} expects {typ.__name__}, got {raw!r}") from None


def load_config_file(path: str) -> dict:
    """Parse a `key = value` file against the train flag schema."""
    schema = config_keys()
    values: dict = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(
                    f"{path}:{lineno}: expected 'key = value', got {line.strip()!r}"
                )
            key, raw = (part.strip() for part in text.split("=", 1))
            if key not in schema:
                raise ConfigError(
                    f"{path}:{lineno}: unknown key {key!r}; valid keys: "
                    + ", ".join(sorted(schema))
                )
            value = _convert_value(key, raw, schema[key])
            if schema[key].get("action") == "append":
                values.setdefault(key, []).append(value)
            else:
                if key in values:
                    raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
                values[key] = value
    return values


def _merge_options(ns: argparse.Namespace) -> argparse.Namespace:
    """Fill unset flags from the config file, then hard defaults."""
    file_values = load_config_file(ns.config) if ns.config else {}
    for key in config_keys():
        if getattr(ns, key) is None and key in file_values:
            setattr(ns, key, file_values[key])
    for key, default in TRAIN_DEFAULTS.items():
        if getattr(ns, key) is None:
            setattr(ns, key, default)
    return ns


# ---------------------------------------------------------------------------
# train assembly


def _matrix_kind(path: str, fully_known: bool) -> str:
    try:
        with open(path) as fh:
            first = fh.readline()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    fields = first.split()
    if len(fields) >= 3 and fields[2].lower() == "array":
        return "dense"
    return "fully-known" if fully_known else "observed"


def _read_training(path: str, fully_known: bool):
    return read_matrix_market(path, kind=_matrix_kind(path, fully_known))


def _read_test(path: str) -> TestSet:
    matrix = read_matrix_market(path, kind="observed")
    rows, cols, vals = matrix.to_coo()
    return TestSet(rows, cols, vals)


def _read_side(path: str) -> SideInfo:
    return SideInfo(_read_training(path, fully_known=True))


def _prior_spec(name: str, beta_precision: float):
    if name == "normal":
        return NormalPriorSpec()
    if name == "macau":
        return MacauPriorSpec(beta_precision=beta_precision)
    if name == "spikeandslab":
        return SpikeSlabPriorSpec()
    raise ConfigError(f"unknown prior {name!r}")


def build_train_inputs(ns: argparse.Namespace):
    """Turn merged flags into session inputs."""
    if not ns.train:
        raise ConfigError("--train is required; provide a Matrix Market file")
    matrices = [_read_training(ns.train, ns.fully_known)]
    for path in ns.view or []:
        matrices.append(_read_training(path, ns.fully_known))
    views = ViewSet([ViewData(matrix=m, col_mode=i + 1)
                     for i, m in enumerate(matrices)])

    side_info = {}
    if ns.side_rows:
        side_info[0] = _read_side(ns.side_rows)
    if ns.side_cols:
        side_info[1] = _read_side(ns.side_cols)

    row_prior = ns.prior_rows
    col_prior = ns.prior_cols
    noise_spec = parse_noise_spec(ns.noise) if ns.noise else None
    if ns.preset:
        preset = expand_preset(ns.preset)
        if preset.requires_side and not side_info:
            raise ConfigError(
                f"preset {preset.name!r} needs side information; pass "
                f"--side-rows and/or --side-cols"
            )
        if not preset.allows_side and side_info:
            raise ConfigError(
                f"preset {preset.name!r} does not use side information; drop "
                f"--side-rows/--side-cols or switch to the macau preset"
            )
        if row_prior is None:
            row_prior = preset.row_prior
            if preset.name == "macau" and 0 in side_info:
                row_prior = "macau"
        if col_prior is None:
            col_prior = preset.col_prior
            if preset.name == "macau" and 1 in side_info:
                col_prior = "macau"
        if noise_spec is None:
            noise_spec = preset.default_noise
    if row_prior is None:
        row_prior = "macau" if 0 in side_info else "normal"
    if col_prior is None:
        col_prior = "macau" if 1 in side_info else "normal"
    if noise_spec is None:
        noise_spec = parse_noise_spec("fixed:5.0")
    if row_prior == "macau" and 0 not in side_info:
        raise ConfigError("row prior 'macau' needs --side-rows")
    if col_prior == "macau" and 1 not in side_info:
        raise ConfigError("column prior 'macau' needs --side-cols")

    priors = [_prior_spec(row_prior, ns.beta_precision)]
    for mode in range(1, views.n_modes):
        name = col_prior
        if name == "macau" and mode not in side_info:
            name = "normal"   # only decorated column modes carry the link
        priors.append(_prior_spec(name, ns.beta_precision))

    test = _read_test(ns.test) if ns.test else None
    cfg = SessionConfig(
        num_latent=ns.num_latent, burnin=ns.burnin, nsamples=ns.nsamples,
        seed=ns.seed, threads=ns.threads, split_threshold=ns.split_threshold,
        checkpoint_every=ns.checkpoint_every, save_prefix=ns.save_prefix,
        csv_trace=ns.csv_trace)
    noise = [noise_spec] * len(views.views)
    return cfg, views, priors, noise, side_info, test


def _progress_printer(row) -> None:
    alphas = " ".join(f"alpha{i}={a:.6g}" for i, a in enumerate(row.alphas))
    rmse = "nan" if math.isnan(row.rmse) else f"{row.rmse:.6f}"
    print(f"iter={row.iteration} phase={row.phase} rmse={rmse} {alphas}")


def _cmd_train(ns: argparse.Namespace) -> int:
    ns = _merge_options(ns)
    cfg, views, priors, noise, side_info, test = build_train_inputs(ns)
    resume = read_snapshot(ns.resume) if ns.resume else None
    started = time.perf_counter()
    result = run(cfg, views, priors, noise, side_info=side_info, test=test,
                 resume=resume, progress=_progress_printer)
    elapsed = time.perf_counter() - started
    if result.test_overlap:
        print(f"warning=test_overlap count={result.test_overlap}")
    rmse = "nan" if math.isnan(result.final_rmse) else f"{result.final_rmse:.6f}"
    print(f"done iterations={cfg.burnin + cfg.nsamples} final_rmse={rmse} "
          f"elapsed_s={elapsed:.2f}")
    return 0


def _cmd_predict(ns: argparse.Namespace) -> int:
    state = read_snapshot(ns.model)
    agg = state.aggregate
    if agg is None:
        raise DataError(
            f"snapshot {ns.model} holds no prediction aggregate; train with a "
            f"test set and at least one post-burn-in sample"
        )
    index = {(int(r), int(c)): k
             for k, (r, c) in enumerate(zip(agg.rows, agg.cols))}
    queries = []
    with open(ns.queries) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.lower().replace(" ", "") == "i,j":
                continue
            parts = text.split(",")
            if len(parts) != 2:
                raise DataError(f"{ns.queries}:{lineno}: expected 'i,j', "
                                f"got {text!r}; queries are 1-based cells")
            try:
                queries.append((int(parts[0]), int(parts[1]), lineno))
            except ValueError:
                raise DataError(f"{ns.queries}:{lineno}: non-integer query "
                                f"{text!r}; queries are 1-based cells") from None
    print("i,j,mean,std")
    for i, j, lineno in queries:
        k = index.get((i - 1, j - 1))
        if k is None:
            raise DataError(
                f"{ns.queries}:{lineno}: ({i}, {j}) is not a test cell of this "
                f"model; only aggregated test cells can be queried"
            )
        if agg.count > 1:
            std = math.sqrt(agg.m2[k] / (agg.count - 1))
        else:
            std = 0.0
        print(f"{i},{j},{float(agg.mean[k])!r},{float(std)!r}")
    return 0


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"{flag} expects a comma-separated integer list, "
                          f"got {text!r}") from None
    if not values:
        raise ConfigError(f"{flag} expects at least one value")
    return values


def _cmd_bench(ns: argparse.Namespace) -> int:
    if ns.kernel == "cholesky":
        reps = ns.reps if ns.reps is not None else 1000
        rows = bench_cholesky(ns.num_latent, reps, seed=ns.seed)
    elif ns.kernel == "accumulate":
        reps = ns.reps if ns.reps is not None else 20
        thresholds = _parse_int_list(ns.thresholds, "--thresholds")
        rows = bench_accumulate(ns.entries, ns.num_latent, thresholds, reps,
                                seed=ns.seed)
    else:
        reps = ns.reps if ns.reps is not None else 3
        threads = _parse_int_list(ns.threads, "--threads")
        rows = bench_full_iteration(ns.rows, ns.cols, ns.nnz, ns.num_latent,
                                    threads, reps, seed=ns.seed,
                                    split_threshold=ns.split_threshold)
    print(CSV_HEADER)
    for row in rows:
        print(row.csv())
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    ns = parser.parse_args(argv)
    try:
        if ns.command == "train":
            return _cmd_train(ns)
        if ns.command == "predict":
            return _cmd_predict(ns)
        return _cmd_bench(ns)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except GibbsMfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
