"""Time the compiled kernels against the numpy fallback on realistic sizes.

Usage: python benchmarks/bench_kernels.py [--n 64] [--repeat 5]
Prints one line per kernel with the best time of each backend and the speedup.
"""
import argparse
import timeit

import numpy as np

from nudgefem import _fallback, fem
from nudgefem import mesh as msh

try:
    from nudgefem import _kernels
except ImportError:
    _kernels = None


def cases(n):
    m = msh.barycentric_refine(msh.build_structured(n))
    V, Q = fem.taylor_hood(m)
    rng = np.random.default_rng(0)
    E, nq = V.geometry.qweights.shape
    phi = rng.random((nq, 6))
    grads = rng.standard_normal((E, nq, 6, 2))
    w = rng.standard_normal((E, nq, 2))
    W = V.geometry.qweights
    pos = rng.integers(0, V.n_scalar, E * 36)
    vals = rng.standard_normal(E * 36)
    idx = m.cell_index()
    pts = rng.random((E * nq, 2))
    loc = (pts, m.vertices, m.triangles, idx.bin_of(pts), idx.offsets, idx.triangles)
    return m, {
        "advection_local": lambda k: k.advection_local(phi, grads, w, W),
        "scatter_add": lambda k: k.scatter_add(pos, vals, V.n_scalar),
        "locate_points": lambda k: k.locate_points(*loc),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    m, work = cases(args.n)
    print(f"mesh n={args.n} refined: {m.n_triangles} triangles")
    if _kernels is None:
        print("compiled kernels not built; timing the fallback only")
    print(f"{'kernel':16s} {'python [ms]':>12s} {'compiled [ms]':>14s} {'speedup':>8s}")
    for name, fn in work.items():
        tp = min(timeit.repeat(lambda: fn(_fallback), number=1, repeat=args.repeat)) * 1e3
        if _kernels is None:
            print(f"{name:16s} {tp:12.2f} {'-':>14s} {'-':>8s}")
            continue
        tc = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:16s} {tp:12.2f} {tc:14.2f} {tp / tc:8.1f}x")


if __name__ == "__main__":
    main()
