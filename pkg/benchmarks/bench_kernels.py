"""Compare the numba and numpy implementations of the hot kernels.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``.  Each
kernel is checked for agreement first, then timed (best of N, after one
warm-up call so numba compilation is excluded).
"""

import argparse
import time

import numpy as np

from bilinv._accel import HAS_NUMBA, NUMBA_KERNELS, NUMPY_KERNELS
from bilinv.phantom import layered_grid


def _best(fn, args, repeat):
    fn(*args)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def _cases(rng):
    centers = layered_grid((16, 16, 10), 2.0).centers
    l, p, n = 96, 960, 6000
    rows = np.sort(rng.integers(0, l, p)).astype(np.int64)
    vals = rng.standard_normal((p, n))
    y, x = rng.standard_normal(p), rng.standard_normal(n)
    w = rng.uniform(0.01, 1.0, 200_000)
    t = rng.uniform(0, 5e-9, 200_000)
    return {
        "truncated_gaussian": (centers, 9e-6, 3.0, 9e-10),
        "rowsparse_contract_y": (rows, vals, y, l),
        "rowsparse_contract_x": (rows, vals, x, l),
        "rowsparse_contract_yx": (rows, vals, y, x, l),
        "phasor_sums": (w, t, 1e8),
    }


def _agree(name, a, b):
    if name == "truncated_gaussian":
        ka = dict(zip(zip(a[0].tolist(), a[1].tolist()), a[2].tolist()))
        kb = dict(zip(zip(b[0].tolist(), b[1].tolist()), b[2].tolist()))
        if ka.keys() != kb.keys():
            return float("inf")
        return max(abs(ka[k] - kb[k]) for k in ka) / max(abs(v) for v in ka.values())
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1e-300))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not HAS_NUMBA:
        print("numba is not installed; nothing to compare")
        return 1
    cases = _cases(np.random.default_rng(0))
    print(f"{'kernel':<24}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}{'rel diff':>12}")
    for name, a in cases.items():
        diff = _agree(name, NUMPY_KERNELS[name](*a), NUMBA_KERNELS[name](*a))
        t_np = _best(NUMPY_KERNELS[name], a, args.repeat)
        t_nb = _best(NUMBA_KERNELS[name], a, args.repeat)
        print(f"{name:<24}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>10.1f}{diff:>12.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
