"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel is run once untimed (numba compiles or loads its cache), then
timed ``--repeat`` times; the best time is reported along with the largest
absolute difference between the two backends' results.
"""

import argparse
import time

import numpy as np

from simdps import _kernels


def _cases(rng):
    frames, bins = 2000, 513
    obs = rng.random((300, bins))
    src = rng.random((frames, bins))
    weights = np.where(rng.random(300) < 0.9, rng.random(300), 0.0)
    yield "sliding_cost", (obs, src, weights, frames - 300)

    x = np.sin(0.05 * np.arange(8192)) + 0.01 * rng.standard_normal(8192)
    yield "burg", (x, 256)

    coefs = _kernels.NUMPY_KERNELS["burg"](x, 64)
    yield "ar_extrapolate", (x, coefs, 88200)


def _best(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not _kernels.HAVE_NUMBA:
        print("numba is not importable; only the numpy kernels exist")
        return 1
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':16s} {'numpy s':>10s} {'numba s':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, case in _cases(rng):
        fn_np = _kernels.NUMPY_KERNELS[name]
        fn_nb = _kernels.NUMBA_KERNELS[name]
        fn_nb(*case)
        t_np, out_np = _best(fn_np, case, args.repeat)
        t_nb, out_nb = _best(fn_nb, case, args.repeat)
        diff = float(np.max(np.abs(np.asarray(out_np) - np.asarray(out_nb))))
        print(f"{name:16s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.1f} {diff:11.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
