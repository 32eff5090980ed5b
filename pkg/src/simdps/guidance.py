"""Likelihood guidance for posterior sampling.

The observed-data term pulls ``M x0_hat`` toward ``y``; the auxiliary term
pulls ``(I - M) x0_hat`` toward a retrieved guide. Each term has its own
adaptively scaled variance, and both gradients are propagated through the
denoiser with its vector-Jacobian product (or with ``J = I`` for black-box
denoisers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import CapabilityError, ConfigError, ShapeError
from .signal import GapMask, Observation

__all__ = [
    "GuidanceConfig",
    "GuidanceState",
    "PRESETS",
    "adaptive_variance",
    "dps_likelihood_score",
    "simdps_likelihood_score",
    "posterior_score",
    "PosteriorScore",
]

GRAD_MODES = ("exact_vjp", "identity_jacobian")
VARIANCE_NORMS = ("gradient", "residual")


@dataclass(frozen=True)
class GuidanceConfig:
    """Guidance weights and how the gradients are formed.

    ``variance_norm`` picks what the adaptive variance is scaled by: the
    norm of the likelihood gradient (``"gradient"``, the default) or the
    norm of the masked residual (``"residual"``). ``fixed_var_y`` /
    ``fixed_var_aux`` replace the adaptive variances with a constant or a
    callable of sigma; the weights still switch the terms on and off.
    """

    omega_y: float = 0.3
    omega_aux: float = 0.0
    grad_mode: str = "exact_vjp"
    variance_norm: str = "gradient"
    fixed_var_y: float | Callable | None = None
    fixed_var_aux: float | Callable | None = None

    def __post_init__(self):
        if self.omega_y < 0 or self.omega_aux < 0:
            raise ConfigError("guidance weights must be >= 0")
        if self.grad_mode not in GRAD_MODES:
            raise ConfigError(f"grad_mode must be one of {GRAD_MODES}")
        if self.variance_norm not in VARIANCE_NORMS:
            raise ConfigError(f"variance_norm must be one of {VARIANCE_NORMS}")

    @classmethod
    def preset(cls, method, **overrides):
        try:
            base = PRESETS[method]
        except KeyError:
            raise ConfigError(f"no guidance preset for method {method!r}") from None
        return replace(base, **overrides)

    def to_dict(self):
        return {
            "omega_y": self.omega_y,
            "omega_aux": self.omega_aux,
            "grad_mode": self.grad_mode,
            "variance_norm": self.variance_norm,
        }


PRESETS = {
    "dps": GuidanceConfig(omega_y=0.3, omega_aux=0.0),
    "simdps-l": GuidanceConfig(omega_y=0.3, omega_aux=0.15),
    "simdps-h": GuidanceConfig(omega_y=0.3, omega_aux=0.04),
}


@dataclass(frozen=True, eq=False)
class GuidanceState:
    obs: Observation
    denoiser: object
    guide: np.ndarray | None = None
    mask: GapMask | None = None

    def __post_init__(self):
        mask = self.obs.mask if self.mask is None else self.mask
        object.__setattr__(self, "mask", mask)
        if self.guide is not None:
            g = np.asarray(getattr(self.guide, "samples", self.guide), dtype=np.float64)
            mask.check(g, "guide")
            object.__setattr__(self, "guide", g)

    @property
    def y(self):
        return self.obs.y.samples


def adaptive_variance(norm, sigma_tau, omega, n):
    """``sigma_tau * norm / (omega * sqrt(n))``."""
    if omega <= 0:
        raise ConfigError("omega must be > 0; a zero weight disables the term instead")
    return sigma_tau * norm / (omega * math.sqrt(n))


def _fixed(value, sigma):
    return value(sigma) if callable(value) else value


def _term(x, sigma, resid, omega, fixed, state, cfg):
    """``-(1/s2) * grad_x ||resid||^2`` where ``resid`` depends on ``-x0_hat(x)``."""
    if cfg.grad_mode == "exact_vjp":
        if not getattr(state.denoiser, "has_vjp", True):
            raise CapabilityError(
                "denoiser exposes no VJP; use grad_mode='identity_jacobian'"
            )
        jt_r = state.denoiser.vjp(x, sigma, resid)
    else:
        jt_r = resid
    grad = -2.0 * jt_r
    if fixed is not None:
        s2 = np.asarray(_fixed(fixed, sigma), dtype=np.float64)
    else:
        src = grad if cfg.variance_norm == "gradient" else resid
        norm = np.linalg.norm(src, axis=-1, keepdims=True)
        s2 = adaptive_variance(norm, sigma, omega, x.shape[-1])
    # zero residual means a perfect fit: the term vanishes instead of 0/0
    return np.divide(-grad, s2, out=np.zeros_like(grad), where=s2 != 0)


def _check(x, state):
    if np.shape(x)[-1] != state.mask.n:
        raise ShapeError(f"x has length {np.shape(x)[-1]}, mask expects {state.mask.n}")


def dps_likelihood_score(x, sigma, state, cfg, x0=None):
    """Observed-data likelihood score ``-grad (1/s2_y) ||M (y - x0_hat(x))||^2``."""
    _check(x, state)
    if cfg.omega_y == 0:
        return np.zeros(np.shape(x))
    if x0 is None:
        x0 = state.denoiser.denoise(x, sigma)
    resid = state.mask.masked(state.y - x0)
    return _term(x, sigma, resid, cfg.omega_y, cfg.fixed_var_y, state, cfg)


def simdps_likelihood_score(x, sigma, state, cfg, x0=None):
    """Observed-data term plus the auxiliary guide term on the gap.

    With ``omega_aux == 0`` this returns exactly the observed-data term.
    """
    _check(x, state)
    if x0 is None:
        x0 = state.denoiser.denoise(x, sigma)
    out = dps_likelihood_score(x, sigma, state, cfg, x0)
    if cfg.omega_aux == 0:
        return out
    if state.guide is None:
        raise ConfigError("omega_aux > 0 requires a guide signal")
    resid = state.mask.nulled(state.guide - x0)
    return out + _term(x, sigma, resid, cfg.omega_aux, cfg.fixed_var_aux, state, cfg)


def posterior_score(prior_score, likelihood_score):
    prior_score = np.asarray(prior_score)
    likelihood_score = np.asarray(likelihood_score)
    if prior_score.shape != likelihood_score.shape:
        raise ShapeError(
            f"score shapes differ: {prior_score.shape} vs {likelihood_score.shape}"
        )
    return prior_score + likelihood_score


class PosteriorScore:
    """``score_fn(x, sigma)`` for the sampler: prior score plus guidance.

    The denoiser runs once per evaluation; its output feeds both the
    Tweedie prior score and the likelihood terms.
    """

    def __init__(self, state, cfg):
        self.state = state
        self.cfg = cfg
        self.evaluations = 0

    def __call__(self, x, sigma):
        self.evaluations += 1
        x0 = self.state.denoiser.denoise(x, sigma)
        prior = (x0 - x) / (sigma * sigma)
        lik = simdps_likelihood_score(x, sigma, self.state, self.cfg, x0)
        return posterior_score(prior, lik)
