"""Noise schedule, denoiser contract and the stochastic Heun sampler.

Noise level and diffusion time are identified (``sigma(tau) = tau``), so the
probability-flow ODE reads ``dx/dsigma = -sigma * score(x, sigma)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError, DataError, DivergenceError

__all__ = [
    "DiffusionSchedule",
    "log_schedule",
    "Denoiser",
    "SamplerConfig",
    "sample_prior",
    "heun_stochastic_sample",
    "churn_gamma",
]

SIGMA_MAX = 8.0
SIGMA_MIN = math.exp(-5.0)
STEPS = 50


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    """Descending levels ``sigma_max = s[0] > ... > s[T-1] = sigma_min`` plus a final 0."""

    sigmas: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sigmas, dtype=np.float64)
        if s.ndim != 1 or s.size < 3 or s[-1] != 0.0:
            raise DataError("schedule needs at least two positive levels and a terminal 0")
        if not np.all(np.diff(s) < 0):
            raise DataError("schedule must be strictly decreasing")
        s.setflags(write=False)
        object.__setattr__(self, "sigmas", s)

    @property
    def T(self):
        return self.sigmas.size - 1

    @property
    def sigma_max(self):
        return float(self.sigmas[0])

    @property
    def sigma_min(self):
        return float(self.sigmas[-2])


def log_schedule(T=STEPS, sigma_min=SIGMA_MIN, sigma_max=SIGMA_MAX):
    if not (0 < sigma_min < sigma_max) or T < 2:
        raise DataError(
            f"need 0 < sigma_min < sigma_max and T >= 2, got {sigma_min}, {sigma_max}, {T}"
        )
    s = np.exp(np.linspace(math.log(sigma_max), math.log(sigma_min), T))
    # pin the endpoints: exp(log(v)) is not always v
    s[0], s[-1] = sigma_max, sigma_min
    return DiffusionSchedule(np.append(s, 0.0))


class Denoiser:
    """Base denoiser: subclasses provide ``denoise`` and, if they can, ``vjp``.

    All methods act on the last axis, so a batch of signals can be passed as
    a 2-D array.
    """

    has_vjp = True

    def denoise(self, x, sigma):
        raise NotImplementedError

    def score(self, x, sigma, x0=None):
        """Tweedie: ``(E[x0 | x] - x) / sigma^2``."""
        if x0 is None:
            x0 = self.denoise(x, sigma)
        return (x0 - x) / (sigma * sigma)

    def vjp(self, x, sigma, v):
        """``v^T d(denoise)/dx`` evaluated at ``x``."""
        raise CapabilityError(f"{type(self).__name__} has no vector-Jacobian product")


@dataclass(frozen=True)
class SamplerConfig:
    s_churn: float = 10.0
    seed: int | None = 0

    def __post_init__(self):
        if self.s_churn < 0:
            raise DataError("s_churn must be >= 0")


def churn_gamma(s_churn, T):
    if s_churn <= 0:
        return 0.0
    return min(s_churn / T, math.sqrt(2.0) - 1.0)


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_prior(n, sigma_max, rng=None):
    """i.i.d. ``N(0, sigma_max^2)`` draw of shape ``n`` (int or tuple)."""
    return sigma_max * _rng(rng).standard_normal(n)


def heun_stochastic_sample(score_fn, schedule, cfg=None, n=None, x_init=None, callback=None):
    """Integrate the probability-flow ODE from ``sigma_max`` down to 0.

    Each step first raises the level to ``sigma_hat = sigma_i (1 + gamma)``
    with fresh noise, then takes a Heun step to the next level (plain Euler
    for the final step to 0). ``callback(i, sigma_hat, sigma_next, x)`` is
    called after every step.
    """
    cfg = cfg or SamplerConfig()
    rng = _rng(cfg.seed)
    sigmas = schedule.sigmas
    T = schedule.T
    gamma = churn_gamma(cfg.s_churn, T)
    if x_init is None:
        if n is None:
            raise DataError("need n or x_init")
        x = sample_prior(n, sigmas[0], rng)
    else:
        x = np.array(x_init, dtype=np.float64, copy=True)

    def drift(x, sigma, step):
        s = score_fn(x, sigma)
        if not np.all(np.isfinite(s)):
            raise DivergenceError(step, sigma)
        return -sigma * s

    for i in range(T):
        sigma, sigma_next = sigmas[i], sigmas[i + 1]
        sigma_hat = sigma * (1.0 + gamma)
        if gamma > 0:
            x = x + math.sqrt(sigma_hat ** 2 - sigma ** 2) * rng.standard_normal(x.shape)
        d = drift(x, sigma_hat, i)
        x_next = x + (sigma_next - sigma_hat) * d
        if sigma_next > 0:
            d2 = drift(x_next, sigma_next, i)
            x_next = x + (sigma_next - sigma_hat) * 0.5 * (d + d2)
        x = x_next
        if callback is not None:
            callback(i, sigma_hat, sigma_next, x)
    return x
