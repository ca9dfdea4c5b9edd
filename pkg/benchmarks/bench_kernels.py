"""Compare the compiled and pure-numpy kernel backends.

    python3 benchmarks/bench_kernels.py --sizes 1e5 1e6 --repeat 3

Each kernel is run on identical inputs under both backends; the table shows
the best wall time of ``--repeat`` runs and checks that the outputs agree.
"""
import argparse
import json
import sys
import time

import numpy as np

from spdcsim import kernels
from spdcsim.correlator import CorrelationMode, CorrelogramConfig, bin_thresholds


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def make_inputs(n, seed):
    rng = np.random.default_rng(seed)
    tick = 162e-12
    span = n / 1e5  # 100 kHz streams
    a = np.sort(rng.integers(0, int(span / tick), n))
    b = np.sort(np.clip(a + rng.laplace(0, 1 / (2 * np.pi * 13e6) / tick, n).astype(np.int64),
                        0, None))
    cfg = CorrelogramConfig(3e-9, 300e-9, CorrelationMode.WINDOWED_PAIRWISE)
    dead_ticks = 10e-6 / tick
    t = np.sort(rng.uniform(0, span, n))
    xi = rng.standard_normal((2, n))
    return {
        "windowed_histogram": lambda k: k.windowed_histogram(a, b, bin_thresholds(cfg, tick), False),
        "dead_time_mask": lambda k: k.dead_time_mask(a, dead_ticks),
        "ou_intensity": lambda k: k.ou_intensity(t, 2 * np.pi * 3.25e6, xi[0], xi[1], 0.0, 0.5, 0.5)[0],
    }


def agree(x, y):
    x, y = np.asarray(x), np.asarray(y)
    if x.dtype.kind == "f":
        return bool(np.allclose(x, y, rtol=1e-9, atol=1e-12))
    return bool(np.array_equal(x, y))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=float, nargs="+", default=[1e4, 1e5, 1e6])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--json", help="also write results to this file")
    args = ap.parse_args(argv)

    py = kernels.get_backend("python")
    try:
        cy = kernels.get_backend("cython")
    except ImportError:
        print("compiled backend not built; nothing to compare", file=sys.stderr)
        return 1

    rows = []
    print(f"{'kernel':<20}{'n':>10}{'python s':>12}{'cython s':>12}{'speedup':>10}  match")
    for n in (int(s) for s in args.sizes):
        for name, call in make_inputs(n, args.seed).items():
            tp, op = best_of(lambda: call(py), args.repeat)
            tc, oc = best_of(lambda: call(cy), args.repeat)
            ok = agree(op, oc)
            rows.append({"kernel": name, "n": n, "python_s": tp, "cython_s": tc,
                         "speedup": tp / tc if tc > 0 else float("inf"), "match": ok})
            print(f"{name:<20}{n:>10}{tp:>12.4f}{tc:>12.4f}{tp / tc:>10.1f}  {ok}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0 if all(r["match"] for r in rows) else 2


if __name__ == "__main__":
    sys.exit(main())
