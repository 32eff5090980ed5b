"""Closed-form denoisers used as exact oracles (and as demo-scale priors)."""

from __future__ import annotations

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.special import logsumexp

from .diffusion import Denoiser
from .errors import DataError, ShapeError
from .signal import as_samples

__all__ = [
    "GaussianPrior",
    "GmmPrior",
    "FramedDenoiser",
    "gaussian_denoise",
    "gmm_denoise",
    "analytic_inpainting_posterior",
    "fit_gaussian_demo",
    "fit_gmm_demo",
]


class GaussianPrior(Denoiser):
    """``N(mean, diag(var))``; the MMSE denoiser is linear with diagonal Jacobian."""

    def __init__(self, mean, var):
        mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        var = np.atleast_1d(np.asarray(var, dtype=np.float64))
        mean, var = np.broadcast_arrays(mean, var)
        if np.any(var <= 0) or not np.all(np.isfinite(var)):
            raise DataError("prior variances must be positive and finite")
        self.mean = mean.copy()
        self.var = var.copy()

    @property
    def n(self):
        return self.mean.size

    def _check(self, x):
        if np.shape(x)[-1] != self.n and self.n != 1:
            raise ShapeError(f"prior has dimension {self.n}, input has {np.shape(x)[-1]}")

    def gain(self, sigma):
        """Diagonal of the denoiser Jacobian, ``var / (var + sigma^2)``."""
        return self.var / (self.var + sigma * sigma)

    def denoise(self, x, sigma):
        self._check(x)
        s2 = sigma * sigma
        return (self.var * x + s2 * self.mean) / (self.var + s2)

    def vjp(self, x, sigma, v):
        self._check(x)
        return v * self.gain(sigma)

    def exact_score(self, x, sigma):
        return -(x - self.mean) / (self.var + sigma * sigma)

    def log_density(self, x, sigma):
        tot = self.var + sigma * sigma
        d = np.asarray(x, dtype=np.float64) - self.mean
        return -0.5 * np.sum(d * d / tot + np.log(2 * np.pi * tot) * np.ones_like(d), axis=-1)

    def sample(self, shape, rng):
        return self.mean + np.sqrt(self.var) * rng.standard_normal(shape)

    def posterior_variance(self, sigma):
        """``Var[x0 | x_sigma]`` per dimension."""
        s2 = sigma * sigma
        return self.var * s2 / (self.var + s2)


def gaussian_denoise(prior, x, sigma):
    return prior.denoise(x, sigma)


class GmmPrior(Denoiser):
    """Mixture of isotropic Gaussians ``sum_k w_k N(mu_k, v_k I)``.

    Responsibilities are computed in the log domain, so the denoiser stays
    finite across the whole noise range.
    """

    def __init__(self, weights, means, variances):
        w = np.asarray(weights, dtype=np.float64)
        mu = np.atleast_2d(np.asarray(means, dtype=np.float64))
        v = np.asarray(variances, dtype=np.float64).reshape(-1)
        if w.ndim != 1 or w.size != mu.shape[0] or v.size != w.size:
            raise ShapeError("weights, means and variances disagree on the component count")
        if np.any(w < 0) or not np.isclose(w.sum(), 1.0, rtol=0, atol=1e-9):
            raise DataError("mixture weights must be >= 0 and sum to 1")
        if np.any(v <= 0):
            raise DataError("component variances must be positive")
        self.weights = w
        self.means = mu
        self.variances = v
        with np.errstate(divide="ignore"):
            self._logw = np.log(w)
        self._mu_sq = np.einsum("kn,kn->k", mu, mu)
        self._cache = None

    @property
    def n(self):
        return self.means.shape[1]

    def _parts(self, x, sigma):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n:
            raise ShapeError(f"prior has dimension {self.n}, input has {x.shape[-1]}")
        hit = self._cache
        if hit is not None and hit[0] == sigma and hit[1].shape == x.shape and np.array_equal(hit[1], x):
            return hit[2]
        s2 = sigma * sigma
        tot = self.variances + s2                       # (K,)
        # ||x - mu_k||^2 expanded so the heavy lifting is one matrix product
        sq = (x * x).sum(axis=-1, keepdims=True) - 2.0 * (x @ self.means.T) + self._mu_sq
        np.maximum(sq, 0.0, out=sq)
        logp = self._logw - 0.5 * self.n * np.log(tot) - 0.5 * sq / tot
        gam = np.exp(logp - logsumexp(logp, axis=-1, keepdims=True))
        parts = (gam, self.variances / tot, s2 / tot, tot)
        self._cache = (sigma, x.copy(), parts)
        return parts

    def denoise(self, x, sigma):
        # component means are a_k x + c_k mu_k with a_k + c_k = 1
        x = np.asarray(x, dtype=np.float64)
        gam, a, c, _ = self._parts(x, sigma)
        return (gam @ a)[..., None] * x + (gam * c) @ self.means

    def responsibilities(self, x, sigma):
        return self._parts(x, sigma)[0]

    def vjp(self, x, sigma, v):
        # J = (sum_k g_k a_k) I + sum_k g_k m_k (u_k - u_bar)^T,  u_k = (mu_k - x)/tot_k
        x = np.asarray(x, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        gam, a, c, tot = self._parts(x, sigma)
        vx = (v * x).sum(axis=-1, keepdims=True)
        vm = a * vx + c * (v @ self.means.T)            # v . m_k
        beta = gam * vm
        b_sum = beta.sum(axis=-1, keepdims=True)
        g_t = gam / tot
        b_t = beta / tot
        coef_x = b_sum * g_t.sum(axis=-1, keepdims=True) - b_t.sum(axis=-1, keepdims=True)
        coef_mu = b_t - b_sum * g_t
        return (gam @ a)[..., None] * v + coef_x * x + coef_mu @ self.means

    def log_density(self, x, sigma):
        """``log p_sigma(x)`` of the mixture convolved with ``N(0, sigma^2 I)``."""
        x = np.asarray(x, dtype=np.float64)
        tot = self.variances + sigma * sigma
        d = x[..., None, :] - self.means
        sq = np.einsum("...kn,...kn->...k", d, d)
        logp = self._logw - 0.5 * self.n * np.log(2 * np.pi * tot) - 0.5 * sq / tot
        return logsumexp(logp, axis=-1)

    def exact_score(self, x, sigma):
        """Gradient of :meth:`log_density`, computed without the denoiser."""
        x = np.asarray(x, dtype=np.float64)
        gam, _, _, tot = self._parts(x, sigma)
        g_t = gam / tot
        return g_t @ self.means - g_t.sum(axis=-1, keepdims=True) * x


def gmm_denoise(prior, x, sigma):
    return prior.denoise(x, sigma)


class FramedDenoiser(Denoiser):
    """Apply a frame-level prior to consecutive non-overlapping frames.

    The signal is zero-padded to a whole number of frames; the prior sees each
    frame as an independent draw, so the Jacobian is block diagonal.
    """

    def __init__(self, prior, frame):
        self.prior = prior
        self.frame = int(frame)
        self.has_vjp = getattr(prior, "has_vjp", True)

    def _blocks(self, x):
        x = np.asarray(x, dtype=np.float64)
        n = x.shape[-1]
        pad = (-n) % self.frame
        if pad:
            x = np.concatenate([x, np.zeros(x.shape[:-1] + (pad,))], axis=-1)
        return x.reshape(x.shape[:-1] + (-1, self.frame)), n

    def denoise(self, x, sigma):
        xb, n = self._blocks(x)
        out = self.prior.denoise(xb, sigma)
        return out.reshape(out.shape[:-2] + (-1,))[..., :n]

    def vjp(self, x, sigma, v):
        xb, n = self._blocks(x)
        vb, _ = self._blocks(v)
        out = self.prior.vjp(xb, sigma, vb)
        return out.reshape(out.shape[:-2] + (-1,))[..., :n]


def analytic_inpainting_posterior(prior, obs, mask=None, sigma_y=None):
    """Exact posterior mean and variance for a diagonal Gaussian prior.

    Observed samples combine the prior with ``N(y, sigma_y^2)``; gap samples
    keep the prior. With ``sigma_y = 0`` observed samples collapse onto ``y``.
    """
    mask = obs.mask if mask is None else mask
    sigma_y = obs.measurement_noise_sigma if sigma_y is None else sigma_y
    y = as_samples(obs.y)
    mu = np.broadcast_to(prior.mean, y.shape).astype(np.float64)
    var = np.broadcast_to(prior.var, y.shape).astype(np.float64)
    mean, post = mu.copy(), var.copy()
    obs_idx = mask.m.astype(bool)
    if sigma_y == 0:
        mean[obs_idx] = y[obs_idx]
        post[obs_idx] = 0.0
    else:
        s2 = sigma_y * sigma_y
        v = var[obs_idx]
        post[obs_idx] = v * s2 / (v + s2)
        mean[obs_idx] = (s2 * mu[obs_idx] + v * y[obs_idx]) / (v + s2)
    return mean, post


def _training_frames(signals, frame, max_frames, rng):
    chunks = []
    for s in signals:
        x = as_samples(s)
        k = x.size // frame
        if k:
            chunks.append(x[: k * frame].reshape(k, frame))
    if not chunks:
        raise DataError(f"no signal is long enough for a {frame}-sample frame")
    frames = np.concatenate(chunks)
    if frames.shape[0] > max_frames:
        frames = frames[np.sort(rng.choice(frames.shape[0], max_frames, replace=False))]
    return frames


def fit_gaussian_demo(signals):
    """Zero-mean isotropic Gaussian with the pooled sample variance."""
    x = np.concatenate([as_samples(s) for s in signals])
    var = max(float(np.mean(x * x)), 1e-8)
    return GaussianPrior(np.zeros(1), np.array([var]))


def fit_gmm_demo(signals, frame=64, components=32, seed=0, max_frames=20000):
    """Framed GMM prior fitted with k-means on non-overlapping signal frames."""
    rng = np.random.default_rng(seed)
    frames = _training_frames(signals, frame, max_frames, rng)
    k = min(components, frames.shape[0])
    centroids, labels = kmeans2(frames, k, minit="++", seed=rng, iter=20)
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    resid = frames - centroids[labels]
    per = np.bincount(labels, weights=np.einsum("ij,ij->i", resid, resid), minlength=k)
    floor = max(1e-6, 1e-3 * float(np.mean(frames * frames)))
    var = np.where(counts > 0, per / np.maximum(counts, 1) / frame, floor)
    var = np.maximum(var, floor)
    keep = counts > 0
    w = counts[keep] / counts[keep].sum()
    return FramedDenoiser(GmmPrior(w, centroids[keep], var[keep]), frame)
