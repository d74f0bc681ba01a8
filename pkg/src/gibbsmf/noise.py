"""Gaussian observation-noise models supplying the precision alpha.

Fixed noise keeps a constant precision; adaptive noise resamples the
precision once per iteration from its Gamma-conjugate conditional given
the current sum of squared residuals.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError, NumericalError
from .rng import RngStream


@dataclass(frozen=True)
class FixedNoise:
    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"fixed noise precision must be positive, got {self.alpha}")

    def describe(self) -> str:
        return f"fixed:{self.alpha:g}"


@dataclass(frozen=True)
class AdaptiveNoise:
    a0: float = 1.0
    b0: float = 1.0

    def __post_init__(self):
        if not self.a0 > 0 or not self.b0 > 0:
            raise ConfigError(
                f"adaptive noise requires a0 > 0 and b0 > 0, got ({self.a0}, {self.b0})"
            )

    def describe(self) -> str:
        return f"adaptive:{self.a0:g}:{self.b0:g}"


NoiseSpec = FixedNoise | AdaptiveNoise


def parse_noise_spec(text: str) -> NoiseSpec:
    """Parse 'fixed:<alpha>' or 'adaptive:<a0>:<b0>' CLI syntax."""
    parts = text.split(":")
    try:
        if parts[0] == "fixed" and len(parts) == 2:
            return FixedNoise(alpha=float(parts[1]))
        if parts[0] == "adaptive" and len(parts) == 3:
            return AdaptiveNoise(a0=float(parts[1]), b0=float(parts[2]))
    except ValueError as exc:
        raise ConfigError(f"bad noise parameter in {text!r}: {exc}") from None
    raise ConfigError(
        f"unrecognized noise spec {text!r}; use fixed:<alpha> or adaptive:<a0>:<b0>"
    )


class NoiseState:
    """Current precision for one training matrix."""

    def __init__(self, spec: NoiseSpec, alpha: float):
        self.spec = spec
        self.alpha = alpha

    @classmethod
    def initialize(cls, spec: NoiseSpec, stream: RngStream) -> "NoiseState":
        if isinstance(spec, FixedNoise):
            return cls(spec, spec.alpha)
        # Adaptive noise starts from one prior draw.
        return cls(spec, stream.gamma(spec.a0, spec.b0))

    @property
    def adaptive(self) -> bool:
        return isinstance(self.spec, AdaptiveNoise)

    def current_precision(self) -> float:
        return self.alpha


def update_precision(state: NoiseState, sse: float, n_obs: int,
                     stream: RngStream) -> float:
    """Resample an adaptive precision from Gamma(a0 + N/2, b0 + SSE/2)."""
    if not state.adaptive:
        return state.alpha
    if sse < 0:
        raise ValueError(f"sum of squared residuals must be >= 0, got {sse}")
    spec = state.spec
    state.alpha = stream.gamma(spec.a0 + 0.5 * n_obs, spec.b0 + 0.5 * sse)
    if not state.alpha > 0 or state.alpha != state.alpha:
        raise NumericalError(f"noise precision became invalid: {state.alpha}")
    return state.alpha
