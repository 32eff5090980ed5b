"""Signal containers and the single-gap masking operator.

The mask is stored as an inclusive sample interval ``[t_s, t_e]`` and never
materialised as a matrix; every operator is an O(n) slice.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, InvalidIntervalError, ShapeError

__all__ = [
    "AudioSignal",
    "GapMask",
    "Observation",
    "as_samples",
    "mask_from_interval",
    "apply_mask",
    "null_project",
    "synthetic_measurement",
]


def _frozen(arr):
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class AudioSignal:
    """Mono samples plus their sample rate in Hz."""

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        samples = _frozen(self.samples)
        if samples.ndim != 1 or samples.size < 1:
            raise ShapeError(f"expected a non-empty 1-D signal, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise DataError("signal contains NaN or Inf")
        if not self.sample_rate > 0:
            raise DataError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.sample_rate

    def with_samples(self, samples):
        return AudioSignal(samples, self.sample_rate)


def as_samples(x):
    """Return the raw float array behind an AudioSignal or array-like."""
    if isinstance(x, AudioSignal):
        return x.samples
    return np.asarray(x, dtype=np.float64)


@dataclass(frozen=True)
class GapMask:
    """One missing interval ``[t_s, t_e]`` (both inclusive) in an n-sample frame."""

    n: int
    t_s: int
    t_e: int

    def __post_init__(self):
        if not (0 <= self.t_s <= self.t_e < self.n):
            raise InvalidIntervalError(
                f"need 0 <= t_s <= t_e < n, got t_s={self.t_s}, t_e={self.t_e}, n={self.n}"
            )

    @property
    def length(self):
        """Nominal gap length ``t_e - t_s`` (one less than the sample count)."""
        return self.t_e - self.t_s

    @property
    def gap_samples(self):
        return self.t_e - self.t_s + 1

    @property
    def gap(self):
        return slice(self.t_s, self.t_e + 1)

    @property
    def m(self):
        """Diagonal of the mask operator: 1 on observed samples, 0 in the gap."""
        out = np.ones(self.n)
        out[self.gap] = 0.0
        return out

    def check(self, x, what="signal"):
        n = np.shape(x)[-1]
        if n != self.n:
            raise ShapeError(f"{what} has length {n}, mask expects {self.n}")

    def masked(self, x):
        """``M x`` along the last axis, for arrays (batched or not)."""
        self.check(x)
        out = np.array(x, dtype=np.float64, copy=True)
        out[..., self.gap] = 0.0
        return out

    def nulled(self, x):
        """``(I - M) x`` along the last axis."""
        self.check(x)
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros_like(x)
        out[..., self.gap] = x[..., self.gap]
        return out

    def scaled(self, ratio):
        """The same gap at a different sample rate (``ratio = new/old``).

        The half-open span ``[t_s, t_e + 1)`` is scaled, so the gap keeps its
        duration.
        """
        n = int(round(self.n * ratio))
        t_s = min(int(round(self.t_s * ratio)), n - 1)
        t_e = min(max(int(round((self.t_e + 1) * ratio)) - 1, t_s), n - 1)
        return GapMask(n, t_s, t_e)


def mask_from_interval(n, t_s, t_e):
    return GapMask(int(n), int(t_s), int(t_e))


@dataclass(frozen=True, eq=False)
class Observation:
    y: AudioSignal
    mask: GapMask
    measurement_noise_sigma: float = 0.0

    def __post_init__(self):
        self.mask.check(self.y.samples, "observation")
        if np.any(self.y.samples[self.mask.gap] != 0.0):
            raise DataError("observation must be exactly zero inside the gap")
        if self.measurement_noise_sigma < 0:
            raise DataError("measurement noise sigma must be >= 0")

    @property
    def sample_rate(self):
        return self.y.sample_rate


def _rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def apply_mask(x, mask, noise_sigma=0.0, rng=None):
    """Observe ``x`` through the mask: ``y = M (x + eps)``, eps ~ N(0, noise_sigma^2)."""
    samples = as_samples(x)
    mask.check(samples)
    rate = x.sample_rate if isinstance(x, AudioSignal) else 1.0
    if noise_sigma < 0:
        raise DataError("noise_sigma must be >= 0")
    y = np.array(samples, copy=True)
    if noise_sigma > 0:
        y = y + noise_sigma * _rng(rng).standard_normal(y.size)
    y[mask.gap] = 0.0
    return Observation(AudioSignal(y, rate), mask, float(noise_sigma))


def null_project(z, mask):
    samples = as_samples(z)
    out = mask.nulled(samples)
    if isinstance(z, AudioSignal):
        return z.with_samples(out)
    return out


def synthetic_measurement(obs, guide, mask=None):
    """Splice observed samples of ``obs.y`` with the gap samples of ``guide``."""
    mask = obs.mask if mask is None else mask
    y = obs.y.samples
    g = as_samples(guide)
    mask.check(y, "observation")
    mask.check(g, "guide")
    out = np.array(y, copy=True)
    out[mask.gap] = g[mask.gap]
    return AudioSignal(out, obs.y.sample_rate)
