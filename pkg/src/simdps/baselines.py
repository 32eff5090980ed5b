"""Reference inpainting methods and objective gap metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dsp import StftConfig, raised_cosine, stft_magnitude
from .errors import DataError, ShapeError
from .signal import AudioSignal, Observation, as_samples

__all__ = [
    "ArModel",
    "ar_fit",
    "ar_extrapolate",
    "ar_inpaint",
    "sim_inpaint",
    "gap_metrics",
]


@dataclass(frozen=True, eq=False)
class ArModel:
    """``x[t] = sum_k coefficients[k] * x[t - 1 - k] + e[t]``."""

    coefficients: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=np.float64).reshape(-1)
        if c.size < 1 or not np.all(np.isfinite(c)):
            raise DataError("AR model needs at least one finite coefficient")
        object.__setattr__(self, "coefficients", c)

    @property
    def order(self):
        return self.coefficients.size

    def is_stable(self, tol=1e-9):
        poly = np.concatenate(([1.0], -self.coefficients))
        return bool(np.all(np.abs(np.roots(poly)) <= 1.0 + tol))


def _fblsq(x, p):
    """Jointly minimise forward and backward prediction error (no lattice constraint)."""
    n = x.size
    win = np.lib.stride_tricks.sliding_window_view(x, p + 1)  # (n - p, p + 1)
    fwd = win[:, :p][:, ::-1]      # x[t-1], ..., x[t-p] predicts x[t]
    bwd = win[:, 1:]               # x[t+1], ..., x[t+p] predicts x[t]
    a = np.concatenate((fwd, bwd))
    b = np.concatenate((win[:, p], win[:, 0]))
    coef, *_ = np.linalg.lstsq(a, b, rcond=None)
    return coef


def ar_fit(context, order, method="fblsq"):
    """Fit AR coefficients to a context segment.

    ``"fblsq"`` minimises the summed forward and backward squared prediction
    error over all coefficients at once; ``"burg"`` runs the Burg lattice
    recursion (always stable, but biased on pure tones). An all-zero context
    gives the zero model.
    """
    x = as_samples(context)
    p = int(order)
    if p < 1:
        raise DataError("AR order must be >= 1")
    if x.size < 3 * p:
        raise DataError(f"need at least {3 * p} context samples for order {p}, got {x.size}")
    if not np.any(x):
        return ArModel(np.zeros(p))
    if method == "fblsq":
        coef = _fblsq(x, p)
    elif method == "burg":
        coef = _kernels.burg(x, p)
    else:
        raise DataError(f"unknown AR method {method!r}")
    return ArModel(coef)


def ar_extrapolate(model, history, n_out):
    return _kernels.ar_extrapolate(as_samples(history), model.coefficients, n_out)


def _side_fill(context, order, n_out, method):
    p = min(order, context.size // 3)
    if p < 1 or n_out == 0:
        return None
    model = ar_fit(context, p, method)
    if method == "fblsq" and not model.is_stable(tol=1e-6):
        model = ar_fit(context, p, "burg")
    return ar_extrapolate(model, context, n_out)


def ar_inpaint(obs, mask=None, order=32, context=None, method="fblsq"):
    """Fill the gap by AR extrapolation from both sides.

    The forward prediction from the left context and the backward prediction
    from the (time-reversed) right context are blended with a raised cosine
    spanning the gap. With context on one side only, that side's prediction
    is used alone. ``context`` caps the number of samples used per side
    (default ``16 * order``).
    """
    mask = obs.mask if mask is None else mask
    y = obs.y.samples
    ctx = 16 * order if context is None else int(context)
    left = y[max(0, mask.t_s - ctx):mask.t_s]
    right = y[mask.t_e + 1:mask.t_e + 1 + ctx][::-1]
    g = mask.gap_samples
    fwd = _side_fill(left, order, g, method)
    bwd = _side_fill(right, order, g, method)
    if bwd is not None:
        bwd = bwd[::-1]
    if fwd is None and bwd is None:
        raise DataError("no context on either side of the gap")
    if fwd is None:
        fill = bwd
    elif bwd is None:
        fill = fwd
    else:
        ramp = raised_cosine(g)
        fill = fwd + ramp * (bwd - fwd)
    out = np.array(y, copy=True)
    out[mask.gap] = fill
    return AudioSignal(out, obs.y.sample_rate)


def sim_inpaint(obs, guide, mask=None, fade_ms=10.0):
    """Insert the guide into the gap with raised-cosine fades on the context side.

    Each fade ends (or starts) exactly at the gap boundary, so the gap holds
    the guide unchanged and only ``fade`` observed samples per side are
    mixed. A fade is shortened when the context on its side is shorter.
    """
    mask = obs.mask if mask is None else mask
    y = obs.y.samples
    g = as_samples(guide)
    mask.check(g, "guide")
    rate = obs.y.sample_rate
    width = int(round(fade_ms * rate / 1000.0))
    out = np.array(y, copy=True)
    out[mask.gap] = g[mask.gap]
    w_in = min(width, mask.t_s)
    if w_in:
        sl = slice(mask.t_s - w_in, mask.t_s)
        out[sl] = y[sl] + raised_cosine(w_in) * (g[sl] - y[sl])
    w_out = min(width, mask.n - mask.t_e - 1)
    if w_out:
        sl = slice(mask.t_e + 1, mask.t_e + 1 + w_out)
        out[sl] = g[sl] + raised_cosine(w_out) * (y[sl] - g[sl])
    return AudioSignal(out, rate)


def gap_metrics(reconstruction, reference, mask, stft=None):
    """Gap RMSE, log-spectral distance over frames inside the gap, boundary jump error.

    ``boundary_jump`` is the largest deviation of the sample-to-sample step
    across either gap edge from the reference's step there. ``gap_lsd`` is
    ``None`` when no whole STFT frame fits inside the gap.
    """
    rec = as_samples(reconstruction)
    ref = as_samples(reference)
    if rec.shape != ref.shape:
        raise ShapeError(f"reconstruction and reference differ: {rec.shape} vs {ref.shape}")
    mask.check(rec)
    d = rec[mask.gap] - ref[mask.gap]
    rmse = float(np.sqrt(np.mean(d * d)))

    jumps = []
    for b in (mask.t_s, mask.t_e + 1):
        if 1 <= b < mask.n:
            jumps.append(abs((rec[b] - rec[b - 1]) - (ref[b] - ref[b - 1])))
    jump = float(max(jumps)) if jumps else 0.0

    cfg = stft or StftConfig()
    lsd = None
    seg = slice(mask.t_s, mask.t_e + 1)
    if mask.gap_samples >= cfg.window_len:
        a = stft_magnitude(rec[seg], cfg).frames ** 2
        b = stft_magnitude(ref[seg], cfg).frames ** 2
        eps = 1e-12
        per_frame = np.sqrt(np.mean((10.0 * np.log10((a + eps) / (b + eps))) ** 2, axis=1))
        lsd = float(np.mean(per_frame))
    return {"gap_rmse": rmse, "gap_lsd": lsd, "boundary_jump": jump}
