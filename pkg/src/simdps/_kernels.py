"""Hot inner loops, compiled with numba when available.

Every kernel exists twice: a ``@njit`` version and a pure-numpy version
with the same signature. Set ``SIMDPS_DISABLE_NUMBA=1`` (before import) to
dispatch to the numpy versions; both sets stay importable as
``NUMBA_KERNELS`` / ``NUMPY_KERNELS`` for tests and benchmarks.
"""

import os

import numpy as np
from scipy.signal import lfilter, lfiltic

_DISABLE = os.environ.get("SIMDPS_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None


# --------------------------------------------------------------------------
# numpy versions


def sliding_cost_numpy(obs, src, weights, n_pos):
    """Weighted squared distance of ``obs`` against every frame offset of ``src``.

    ``cost[j] = sum_q weights[q] * ||obs[q] - src[j + q]||^2`` for
    ``j in range(n_pos)``; frames with zero weight are skipped.
    """
    costs = np.zeros(n_pos)
    for q in np.flatnonzero(weights):
        d = src[q:q + n_pos] - obs[q]
        costs += weights[q] * np.einsum("ij,ij->i", d, d)
    return costs


def burg_numpy(x, order):
    """Burg reflection-coefficient recursion.

    Returns ``c`` such that ``x[t] ~ sum_k c[k] * x[t - 1 - k]``.
    """
    f = np.array(x, dtype=np.float64)
    b = f.copy()
    a = np.zeros(order)
    energy0 = f @ f
    for m in range(order):
        ff = f[m + 1:]
        bb = b[m:-1]
        den = ff @ ff + bb @ bb
        # stop once the residual is numerically exhausted
        if den <= 1e-24 * max(energy0, 1e-300):
            break
        k = -2.0 * (ff @ bb) / den
        prev = a[:m].copy()
        a[:m] = prev + k * prev[::-1]
        a[m] = k
        f[m + 1:], b[m + 1:] = ff + k * bb, bb + k * ff
    return -a


def ar_extrapolate_numpy(history, coefs, n_out):
    """Run the AR recursion forward ``n_out`` steps past ``history``."""
    p = coefs.size
    if n_out == 0:
        return np.zeros(0)
    if p == 0:
        return np.zeros(n_out)
    den = np.concatenate(([1.0], -coefs))
    past = history[::-1][:p]
    if past.size < p:
        past = np.concatenate((past, np.zeros(p - past.size)))
    zi = lfiltic([1.0], den, past)
    out, _ = lfilter([1.0], den, np.zeros(n_out), zi=zi)
    return out


NUMPY_KERNELS = {
    "sliding_cost": sliding_cost_numpy,
    "burg": burg_numpy,
    "ar_extrapolate": ar_extrapolate_numpy,
}


# --------------------------------------------------------------------------
# numba versions

if HAVE_NUMBA:
    _jit = numba.njit(cache=True, nogil=True, fastmath=False)

    @_jit
    def sliding_cost_numba(obs, src, weights, n_pos):
        n_frames, n_bins = obs.shape
        active = np.flatnonzero(weights)
        costs = np.zeros(n_pos)
        for j in range(n_pos):
            acc = 0.0
            for q in active:
                s = 0.0
                for b in range(n_bins):
                    d = obs[q, b] - src[j + q, b]
                    s += d * d
                acc += weights[q] * s
            costs[j] = acc
        return costs

    @_jit
    def burg_numba(x, order):
        n = x.size
        f = x.astype(np.float64).copy()
        b = f.copy()
        a = np.zeros(order)
        prev = np.zeros(order)
        energy0 = 0.0
        for i in range(n):
            energy0 += f[i] * f[i]
        floor = 1e-24 * max(energy0, 1e-300)
        for m in range(order):
            num = 0.0
            den = 0.0
            for t in range(m + 1, n):
                num += f[t] * b[t - 1]
                den += f[t] * f[t] + b[t - 1] * b[t - 1]
            if den <= floor:
                break
            k = -2.0 * num / den
            for i in range(m):
                prev[i] = a[i]
            for i in range(m):
                a[i] = prev[i] + k * prev[m - 1 - i]
            a[m] = k
            # walk backwards so b[t - 1] is still the previous-stage value
            for t in range(n - 1, m, -1):
                ft = f[t]
                bt = b[t - 1]
                f[t] = ft + k * bt
                b[t] = bt + k * ft
        return -a

    @_jit
    def ar_extrapolate_numba(history, coefs, n_out):
        p = coefs.size
        h = history.size
        buf = np.zeros(p + n_out)
        m = min(p, h)
        for i in range(m):
            buf[p - 1 - i] = history[h - 1 - i]
        for t in range(n_out):
            acc = 0.0
            for k in range(p):
                acc += coefs[k] * buf[p + t - 1 - k]
            buf[p + t] = acc
        return buf[p:].copy()

    NUMBA_KERNELS = {
        "sliding_cost": sliding_cost_numba,
        "burg": burg_numba,
        "ar_extrapolate": ar_extrapolate_numba,
    }
else:  # pragma: no cover
    NUMBA_KERNELS = dict(NUMPY_KERNELS)


BACKEND = "numpy" if (_DISABLE or not HAVE_NUMBA) else "numba"
KERNELS = NUMPY_KERNELS if BACKEND == "numpy" else NUMBA_KERNELS


def sliding_cost(obs, src, weights, n_pos):
    obs = np.ascontiguousarray(obs, dtype=np.float64)
    src = np.ascontiguousarray(src, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    return KERNELS["sliding_cost"](obs, src, weights, int(n_pos))


def burg(x, order):
    return KERNELS["burg"](np.ascontiguousarray(x, dtype=np.float64), int(order))


def ar_extrapolate(history, coefs, n_out):
    return KERNELS["ar_extrapolate"](
        np.ascontiguousarray(history, dtype=np.float64),
        np.ascontiguousarray(coefs, dtype=np.float64),
        int(n_out),
    )
