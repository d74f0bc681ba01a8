"""Deterministic, parallel-safe random streams plus scalar samplers.

Every draw site in the sampler gets its own stream, keyed by
(seed, iteration, mode, index).  Keys are mixed into a 128-bit Philox
counter-mode key, so the order in which streams are consumed (and hence
the worker scheduling) has no effect on the numbers drawn.  The same key
always reproduces the same sequence within one installed binary; bit
reproducibility across different numpy builds is not promised.
"""

from __future__ import annotations

import numpy as np
from numpy.random import Generator, Philox

_MASK64 = (1 << 64) - 1

# Reserved purpose indices, disjoint from entity indices (entities are
# assumed < 2^55 per mode).
PURPOSE_BASE = 1 << 55
HYPER_DRAW = PURPOSE_BASE
LINK_DRAW = PURPOSE_BASE + 1
SNS_HYPER_DRAW = PURPOSE_BASE + 2
INIT_DRAW = PURPOSE_BASE + 3
NOISE_DRAW = PURPOSE_BASE + 4

_INDEX_BITS = 56
_INDEX_LIMIT = 1 << _INDEX_BITS
_MODE_LIMIT = 1 << 8


def _mix64(x: int) -> int:
    """SplitMix64 finalizer; a bijection on 64-bit integers."""
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class RngStream:
    """One independent random stream; used by exactly one worker at a time."""

    __slots__ = ("gen",)

    def __init__(self, gen: Generator):
        self.gen = gen

    def raw64(self, n: int | None = None):
        """Raw 64-bit outputs; mainly for stream-separation tests."""
        if n is None:
            return int(self.gen.integers(0, _MASK64, dtype=np.uint64, endpoint=True))
        return self.gen.integers(0, _MASK64, size=n, dtype=np.uint64, endpoint=True)

    def normal(self) -> float:
        return float(self.gen.standard_normal())

    def normals(self, n: int) -> np.ndarray:
        return self.gen.standard_normal(n)

    def uniform(self) -> float:
        return float(self.gen.random())

    def gamma(self, shape: float, rate: float) -> float:
        """Gamma draw parameterized by shape and rate (mean shape/rate)."""
        if not shape > 0 or not rate > 0:
            raise ValueError(f"gamma requires shape > 0 and rate > 0, "
                             f"got shape={shape}, rate={rate}")
        return float(self.gen.standard_gamma(shape)) / rate

    def gammas(self, shapes, rates) -> np.ndarray:
        """Element-wise gamma draws, shape/rate parameterized."""
        shapes = np.asarray(shapes, dtype=np.float64)
        rates = np.asarray(rates, dtype=np.float64)
        if not (shapes > 0).all() or not (rates > 0).all():
            raise ValueError("gamma requires all shapes and rates > 0")
        return self.gen.standard_gamma(shapes) / rates

    def beta(self, a: float, b: float) -> float:
        if not a > 0 or not b > 0:
            raise ValueError(f"beta requires a > 0 and b > 0, got a={a}, b={b}")
        return float(self.gen.beta(a, b))

    def betas(self, a, b) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if not (a > 0).all() or not (b > 0).all():
            raise ValueError("beta requires all parameters > 0")
        return self.gen.beta(a, b)

    def bernoulli(self, p: float) -> int:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"bernoulli requires 0 <= p <= 1, got {p}")
        # p=0 never fires (u >= 0), p=1 always fires (u < 1).
        return 1 if self.gen.random() < p else 0


def stream_for(seed: int, iteration: int, mode: int, index: int) -> RngStream:
    """Create the stream for one (seed, iteration, mode, index) draw site.

    The mapping to Philox keys is injective for mode < 256 and
    index < 2^56, so distinct argument tuples give distinct streams.
    """
    if not 0 <= mode < _MODE_LIMIT:
        raise ValueError(f"mode index {mode} out of range")
    if not 0 <= index < _INDEX_LIMIT:
        raise ValueError(f"stream index {index} out of range")
    w0 = (int(seed) ^ _mix64(int(iteration) + 0x632BE59BD9B4E019)) & _MASK64
    w1 = (mode << _INDEX_BITS) | index
    return RngStream(Generator(Philox(key=[w0, w1])))
