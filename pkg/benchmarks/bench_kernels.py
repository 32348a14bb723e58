"""Compiled vs pure-Python kernel timings.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--quick]

Each kernel runs on the same inputs under both backends; the script checks
that the outputs agree before reporting the best-of-``repeat`` wall time.
"""
import argparse
import sys
import time

import numpy as np

from xrandlab import _kernels_py

try:
    from xrandlab import _kernels
except ImportError:
    _kernels = None


def _constraints(rng, p, m):
    ca = rng.integers(-1, p, size=m)
    cb = rng.integers(-1, p, size=m)
    same = ca == cb
    cb[same] = (ca[same] + 1) % p
    z = rng.normal(size=p)
    lhs = np.where(ca >= 0, z[np.maximum(ca, 0)], 0.0) - np.where(cb >= 0, z[np.maximum(cb, 0)], 0.0)
    rhs = lhs + rng.uniform(0.0, 0.5, size=m)
    return ca.astype(np.int_), cb.astype(np.int_), rhs


def case_projection(rng, scale):
    p, m = 60, 4 * scale
    ca, cb, rhs = _constraints(rng, p, m)
    z = rng.normal(size=p) * 3
    return "project_polyhedron", (z, ca, cb, rhs), lambda out: out[0]


def case_pg(rng, scale):
    p, m = 60, 4 * scale
    ca, cb, rhs = _constraints(rng, p, m)
    M = rng.normal(size=(p + 20, p))
    H = M.T @ M + 0.1 * np.eye(p)
    g = rng.normal(size=p) * 5
    step = 1.0 / np.linalg.eigvalsh(H)[-1]
    return "pg_dykstra", (H, g, ca, cb, rhs, np.zeros(p), step, 1e-8, 100 * scale), lambda out: out[0]


def case_split(rng, scale):
    n, d = 400 * scale, 50
    X = np.round(rng.normal(size=(n, d)) * 4) / 4
    order = np.argsort(X, axis=0, kind="stable").T.copy()
    in_node = rng.random(n) < 0.7
    grad = rng.normal(size=n)
    hess = rng.uniform(0.05, 0.25, size=n)
    return "best_split", (X, order, in_node, grad, hess, 1.0, 1e-3), lambda out: np.array(out[1:])


def case_size(rng, scale):
    return "certified_size", (20000 * scale, 100, 0.9), lambda out: np.array([out])


CASES = (case_projection, case_pg, case_split, case_size)


def best_time(fn, args, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="small inputs, for smoke tests")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; nothing to compare", file=sys.stderr)
        return 1
    scale = 1 if args.quick else 5
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<20}{'python s':>12}{'cython s':>12}{'speedup':>10}  max |diff|")
    for case in CASES:
        name, fargs, key = case(rng, scale)
        t_py, out_py = best_time(getattr(_kernels_py, name), fargs, args.repeat)
        t_cy, out_cy = best_time(getattr(_kernels, name), fargs, args.repeat)
        diff = float(np.max(np.abs(np.asarray(key(out_py), float) - np.asarray(key(out_cy), float))))
        print(f"{name:<20}{t_py:>12.5f}{t_cy:>12.5f}{t_py / t_cy:>10.1f}  {diff:.2e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
