"""Named algorithm presets expanding into prior/noise configurations.

Each preset fixes the prior family per mode and a default noise model;
explicit flags may still override the noise.  The side-information
requirement is part of the preset: the side-information preset refuses
to run without features, the others refuse to run with them.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .noise import AdaptiveNoise, FixedNoise, NoiseSpec

PRESET_NAMES = ("bmf", "macau", "gfa")


@dataclass(frozen=True)
class Preset:
    name: str
    row_prior: str               # prior family for the shared row mode
    col_prior: str               # prior family for every column mode
    default_noise: NoiseSpec
    requires_side: bool
    allows_side: bool


_PRESETS = {
    # Plain Bayesian matrix factorization: normal priors both sides,
    # fixed noise, no side information.  The alpha default is a package
    # choice, tune with --noise.
    "bmf": Preset(name="bmf", row_prior="normal", col_prior="normal",
                  default_noise=FixedNoise(alpha=5.0),
                  requires_side=False, allows_side=False),
    # Side-information factorization: normal priors, a link matrix on the
    # decorated mode(s), adaptive noise unless overridden.
    "macau": Preset(name="macau", row_prior="normal", col_prior="normal",
                    default_noise=AdaptiveNoise(a0=1.0, b0=1.0),
                    requires_side=True, allows_side=True),
    # Group factor analysis: multiple views sharing the row factors,
    # normal prior on the shared rows, spike-and-slab on each view's
    # column mode.
    "gfa": Preset(name="gfa", row_prior="normal", col_prior="spikeandslab",
                  default_noise=AdaptiveNoise(a0=1.0, b0=1.0),
                  requires_side=False, allows_side=False),
}


def expand_preset(name: str) -> Preset:
    preset = _PRESETS.get(name)
    if preset is None:
        raise ConfigError(
            f"unknown preset {name!r}; choose one of {', '.join(PRESET_NAMES)}"
        )
    return preset
