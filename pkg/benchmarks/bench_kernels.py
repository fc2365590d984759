"""Time the numba and numpy flavour of every kernel on pipeline-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 20] [--json out.json]

Numba timings exclude the first (compiling) call.
"""

import argparse
import json
import sys
import time

import numpy as np

from uncgrasp import kernels
from uncgrasp.cloud import axis_angle


def _inputs(rng):
    stack = rng.normal(size=(60, 2048, 3))
    points = rng.uniform(-0.1, 0.1, size=(2048, 3))
    m = 120
    rots = np.stack([axis_angle(rng.normal(size=3), rng.uniform(0, np.pi)) for _ in range(m)])
    centers = rng.uniform(-0.05, 0.05, size=(m, 3))
    half = np.array([0.0185, 0.0425, 0.011])
    G, K = 1024, 64
    idx = rng.integers(0, K, size=(G, 8))
    w = rng.dirichlet(np.ones(8), size=G)
    coef = rng.choice([-1.0, 1.0], size=K)
    vecs = rng.normal(scale=0.004, size=(K, 3))
    gain = rng.uniform(0.7, 1.0, size=G)
    normals = rng.normal(size=(500, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    offsets = rng.uniform(-0.05, 0.05, size=500)
    return {
        "ensemble_stats": (stack,),
        "obb_mask": (points, centers[0], rots[0], half, 1e-12),
        "count_in_boxes": (points, centers, rots, half, 1e-12),
        "lattice_displacement": (idx, w, coef, vecs, gain),
        "plane_inlier_counts": (points, normals, offsets, 1e-3),
    }


def _time(fn, args, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t)
    return best * 1e3


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    rows = []
    for name, inp in _inputs(rng).items():
        np_fn = getattr(kernels, f"{name}_numpy")
        nb_fn = getattr(kernels, f"{name}_numba")
        t_np = _time(np_fn, inp, args.repeat)
        t_nb = None
        if nb_fn is not None:
            nb_fn(*inp)  # compile / load cache
            t_nb = _time(nb_fn, inp, args.repeat)
        rows.append({"kernel": name, "numpy_ms": t_np, "numba_ms": t_nb,
                     "speedup": None if t_nb is None else t_np / t_nb})

    print(f"{'kernel':<22}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for r in rows:
        nb = "n/a" if r["numba_ms"] is None else f"{r['numba_ms']:.3f}"
        sp = "n/a" if r["speedup"] is None else f"{r['speedup']:.1f}x"
        print(f"{r['kernel']:<22}{r['numpy_ms']:>10.3f}{nb:>10}{sp:>9}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
