"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 20] [--json out.json]

Each kernel runs on the shapes it sees during disk training (64x64 frames,
batch 64, 10 particles on a 32x32 heatmap). Outputs are also compared so a
speedup never hides a wrong answer.
"""

import argparse
import json
import sys
import timeit

import numpy as np

from diffpf import _kernels_py as py

try:
    from diffpf import _ckernels as cy
except ImportError:
    cy = None


def cases(rng):
    x = rng.standard_normal((64, 3, 64, 64)).astype(np.float32)
    cols = py.im2col(x, 3, 3, 2, 1)
    pts = rng.uniform(0, 32, size=(64, 10, 2))
    centers = rng.uniform(-64, 64, size=(26, 2))
    radii = rng.uniform(3, 10, size=26)
    colors = rng.random((26, 3))
    return {
        "im2col": lambda m: m.im2col(x, 3, 3, 2, 1),
        "col2im": lambda m: m.col2im(cols, x.shape, 3, 3, 2, 1),
        "splat": lambda m: m.splat(pts, 32, 2.0),
        "render_disks": lambda m: m.render_disks(np.zeros((3, 64, 64)), centers, radii, colors, 2.0, 64.0),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json", default=None)
    args = ap.parse_args(argv)
    if cy is None:
        print("compiled kernels are not built; only the fallback can be timed", file=sys.stderr)
    rows = []
    for name, fn in cases(np.random.default_rng(0)).items():
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat))
        row = {"kernel": name, "python_ms": 1e3 * t_py}
        if cy is not None:
            t_cy = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat))
            a, b = fn(py), np.asarray(fn(cy))
            row.update(cython_ms=1e3 * t_cy, speedup=t_py / t_cy,
                       max_abs_diff=float(np.max(np.abs(a - b))))
        rows.append(row)
    print(f"{'kernel':14s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s} {'max diff':>10s}")
    for r in rows:
        if "cython_ms" in r:
            print(f"{r['kernel']:14s} {r['python_ms']:10.3f} {r['cython_ms']:10.3f} {r['speedup']:8.2f} "
                  f"{r['max_abs_diff']:10.2g}")
        else:
            print(f"{r['kernel']:14s} {r['python_ms']:10.3f} {'-':>10s}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
