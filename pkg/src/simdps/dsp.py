"""Resampling, framed STFT magnitudes, chroma features and crossfades."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal as sps

from .errors import DataError, SignalTooShortError
from .signal import AudioSignal, as_samples

__all__ = [
    "StftConfig",
    "FeatureMatrix",
    "resample",
    "resample_ratio",
    "resampler_halfwidth",
    "stft_magnitude",
    "chromagram",
    "chroma_filterbank",
    "crossfade_splice",
    "raised_cosine",
]

TAPS_PER_PHASE = 64
KAISER_BETA = 8.6
CUTOFF_GUARD = 0.92


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 1024
    fft_size: int = 1024
    hop: int = 256
    window: str = "hann"

    def __post_init__(self):
        if not (0 < self.hop <= self.window_len <= self.fft_size):
            raise DataError(
                f"need 0 < hop <= window_len <= fft_size, got "
                f"{self.hop}, {self.window_len}, {self.fft_size}"
            )

    @property
    def n_bins(self):
        return self.fft_size // 2 + 1

    def window_array(self):
        return _window(self.window, self.window_len)

    def n_frames(self, n_samples):
        if n_samples < self.window_len:
            return 0
        return 1 + (n_samples - self.window_len) // self.hop


@lru_cache(maxsize=16)
def _window(name, length):
    w = sps.get_window(name, length, fftbins=True)
    w.setflags(write=False)
    return w


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Time-major (frames x bins) nonnegative features.

    ``kind`` is ``"stft_mag"`` or ``"chroma"``; ``fft_size`` and
    ``sample_rate`` record where the bins came from.
    """

    frames: np.ndarray
    frame_rate: float
    kind: str = "stft_mag"
    sample_rate: float | None = None
    fft_size: int | None = None

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2:
            raise DataError(f"feature matrix must be 2-D, got shape {frames.shape}")
        if frames.size and (not np.all(np.isfinite(frames)) or frames.min() < 0):
            raise DataError("feature entries must be finite and nonnegative")
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def bin_count(self):
        return self.frames.shape[1]


def resample_ratio(source_rate, target_rate):
    """Return ``(up, down)`` with ``up/down == target/source``."""
    ratio = Fraction(target_rate).limit_denominator(1_000_000) / Fraction(
        source_rate
    ).limit_denominator(1_000_000)
    ratio = ratio.limit_denominator(10_000)
    return ratio.numerator, ratio.denominator


@lru_cache(maxsize=16)
def _resample_filter(up, down):
    width = max(up, down)
    numtaps = TAPS_PER_PHASE * width + 1
    # resample_poly applies the gain of `up` itself
    h = sps.firwin(numtaps, CUTOFF_GUARD / width, window=("kaiser", KAISER_BETA))
    h.setflags(write=False)
    return h


def resampler_halfwidth(source_rate, target_rate):
    """Half support of the resampling filter, in output samples (rounded up)."""
    up, down = resample_ratio(source_rate, target_rate)
    if up == down:
        return 0
    width = max(up, down)
    half = TAPS_PER_PHASE * width / 2
    return int(np.ceil(half / down))


def resample(x, target_rate):
    """Band-limited polyphase resampling with a Kaiser-windowed sinc.

    The filter spans 64 zero crossings of the narrower of the two bands, i.e.
    ``64 * max(up, down) + 1`` taps at the interpolated rate. Output length is
    ``round(len(x) * target / source)``.
    """
    if not target_rate > 0:
        raise DataError(f"target_rate must be positive, got {target_rate}")
    if x.sample_rate == target_rate:
        return x
    up, down = resample_ratio(x.sample_rate, target_rate)
    n_out = int(round(len(x) * up / down))
    if n_out < 1:
        raise SignalTooShortError("signal too short to resample")
    y = sps.resample_poly(x.samples, up, down, window=_resample_filter(up, down))
    if y.size < n_out:
        y = np.concatenate((y, np.zeros(n_out - y.size)))
    return AudioSignal(y[:n_out], float(target_rate))


def _frames(x, cfg):
    x = as_samples(x)
    if x.size < cfg.window_len:
        raise SignalTooShortError(
            f"signal of {x.size} samples is shorter than one window ({cfg.window_len})"
        )
    return sliding_window_view(x, cfg.window_len)[:: cfg.hop]


def stft_magnitude(x, cfg=None):
    """Magnitude STFT, frames starting at sample 0 with no centring."""
    cfg = cfg or StftConfig()
    frames = _frames(x, cfg) * cfg.window_array()
    mag = np.abs(np.fft.rfft(frames, n=cfg.fft_size, axis=-1))
    rate = x.sample_rate if isinstance(x, AudioSignal) else None
    return FeatureMatrix(
        mag,
        frame_rate=(rate / cfg.hop) if rate else 1.0 / cfg.hop,
        kind="stft_mag",
        sample_rate=rate,
        fft_size=cfg.fft_size,
    )


@lru_cache(maxsize=16)
def chroma_filterbank(fft_size, sample_rate, tuning_ref=440.0, fmin=55.0):
    """0/1 matrix (12 x bins) assigning each STFT bin to its pitch class (C = 0)."""
    n_bins = fft_size // 2 + 1
    freqs = np.arange(n_bins) * sample_rate / fft_size
    fb = np.zeros((12, n_bins))
    keep = freqs >= fmin
    midi = np.round(12.0 * np.log2(freqs[keep] / tuning_ref)).astype(int) + 69
    fb[np.mod(midi, 12), np.flatnonzero(keep)] = 1.0
    fb.setflags(write=False)
    return fb


def chromagram(stft, sample_rate=None, tuning_ref=440.0):
    """Fold STFT bin energies into 12 pitch classes, unit L2 norm per frame.

    Bins below 55 Hz are ignored; all-zero frames stay zero.
    """
    sample_rate = sample_rate if sample_rate is not None else stft.sample_rate
    if sample_rate is None:
        raise DataError("chromagram needs the STFT sample rate")
    fft_size = stft.fft_size or 2 * (stft.bin_count - 1)
    fb = chroma_filterbank(int(fft_size), float(sample_rate), float(tuning_ref))
    chroma = (stft.frames ** 2) @ fb.T
    norms = np.linalg.norm(chroma, axis=1, keepdims=True)
    chroma = np.divide(chroma, norms, out=np.zeros_like(chroma), where=norms > 0)
    return FeatureMatrix(
        chroma,
        frame_rate=stft.frame_rate,
        kind="chroma",
        sample_rate=sample_rate,
        fft_size=fft_size,
    )


def raised_cosine(width):
    """Equal-gain fade-in curve of ``width`` samples, strictly inside (0, 1)."""
    k = np.arange(width)
    return 0.5 - 0.5 * np.cos(np.pi * (k + 0.5) / width)


def crossfade_splice(a, b, boundary, fade_ms):
    """Take ``a`` before ``boundary`` and ``b`` from it on, with a centred fade."""
    xa, xb = as_samples(a), as_samples(b)
    if xa.shape != xb.shape:
        raise DataError(f"crossfade inputs differ in length: {xa.size} vs {xb.size}")
    rate = a.sample_rate if isinstance(a, AudioSignal) else None
    if isinstance(b, AudioSignal) and rate is not None and b.sample_rate != rate:
        raise DataError("crossfade inputs differ in sample rate")
    if rate is None:
        raise DataError("crossfade_splice needs AudioSignal inputs to convert fade_ms")
    n = xa.size
    width = int(round(fade_ms * rate / 1000.0))
    start = boundary - width // 2
    stop = start + width
    if not (0 <= boundary <= n) or start < 0 or stop > n:
        raise DataError(
            f"fade [{start}, {stop}) around boundary {boundary} exceeds [0, {n})"
        )
    out = np.empty(n)
    out[:start] = xa[:start]
    out[stop:] = xb[stop:]
    if width:
        g = raised_cosine(width)
        seg_a = xa[start:stop]
        out[start:stop] = seg_a + g * (xb[start:stop] - seg_a)
    return AudioSignal(out, rate)
