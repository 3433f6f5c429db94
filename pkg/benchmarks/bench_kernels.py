"""Numba vs numpy timing for the hot kernels in ``mmfp._accel``.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--json PATH]

Each kernel is timed on both paths with the same inputs (best of N runs after
one warm-up call, so JIT compilation is excluded) and the outputs are checked
against each other before timing.
"""

import argparse
import json
import time

import numpy as np

from mmfp import _accel


def best_time(fn, args, repeat):
    fn(*args)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    omega = rng.normal(scale=1.5, size=(20_000, 3))
    R = _accel.so3_exp_np(omega)
    w_hat = omega + rng.normal(scale=0.1, size=omega.shape)
    A, B = rng.normal(size=(200, 102)), rng.normal(size=(300, 102))
    n = 60_000
    p, g, m = rng.normal(size=(3, n))
    v = rng.uniform(size=n)
    adam = (p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 10)
    return [
        ("so3_exp (20k)", _accel.so3_exp_np, _accel.so3_exp_nb, (omega,)),
        ("so3_log (20k)", _accel.so3_log_np, _accel.so3_log_nb, (R,)),
        ("geodesic_sq + grad (20k)", _accel.geodesic_sq_np, _accel.geodesic_sq_nb, (R, w_hat)),
        ("pairwise_sqdist (200x300x102)", _accel.pairwise_sqdist_np, _accel.pairwise_sqdist_nb, (A, B)),
        ("adam_update (60k params)", _accel.adam_update_np, _accel.adam_update_nb, adam),
    ]


def _max_diff(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return max(float(np.max(np.abs(np.asarray(x) - np.asarray(y)))) for x, y in zip(a, b))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json", default=None, help="also write the results here")
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; only the numpy path is available")

    rows = []
    print(f"{'kernel':32s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, f_np, f_nb, a in cases(np.random.default_rng(0)):
        diff = _max_diff(f_np(*a), f_nb(*a))
        t_np, t_nb = best_time(f_np, a, args.repeat), best_time(f_nb, a, args.repeat)
        rows.append({"kernel": name, "numpy_s": t_np, "numba_s": t_nb, "speedup": t_np / t_nb, "max_diff": diff})
        print(f"{name:32s} {1e3 * t_np:10.3f} {1e3 * t_nb:10.3f} {t_np / t_nb:7.1f}x {diff:11.1e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()
