"""Composable Bayesian matrix factorization via Gibbs sampling."""

from .data import (
    DenseMatrix,
    SideInfo,
    SparseFullyKnownMatrix,
    SparseObservedMatrix,
    TestSet,
)
from .errors import (
    ConfigError,
    DataError,
    GibbsMfError,
    NotPositiveDefinite,
    NumericalError,
    SnapshotError,
)
from .noise import AdaptiveNoise, FixedNoise, parse_noise_spec
from .priors import MacauPriorSpec, NormalPriorSpec, SpikeSlabPriorSpec
from .sampler import (
    PredictionAggregate,
    RunResult,
    Session,
    SessionConfig,
    ViewData,
    ViewSet,
    run,
)

__version__ = "0.1.0"

__all__ = [
    "AdaptiveNoise",
    "ConfigError",
    "DataError",
    "DenseMatrix",
    "FixedNoise",
    "GibbsMfError",
    "MacauPriorSpec",
    "NormalPriorSpec",
    "NotPositiveDefinite",
    "NumericalError",
    "PredictionAggregate",
    "RunResult",
    "Session",
    "SessionConfig",
    "SideInfo",
    "SnapshotError",
    "SparseFullyKnownMatrix",
    "SparseObservedMatrix",
    "SpikeSlabPriorSpec",
    "TestSet",
    "ViewData",
    "ViewSet",
    "parse_noise_spec",
    "run",
    "__version__",
]
