"""Time the numba and pure-numpy paths of the hot kernels.

Each backend runs in its own subprocess with ``LADDER_NUMBA`` set, so the
package picks the path exactly as it would in normal use.  Results from
both backends are compared before timings are reported.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _best_of(fn, repeat):
    fn()  # warm-up (includes jit compilation)
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        ts.append(time.perf_counter() - t0)
    return min(ts), out


def child(repeat):
    from ladder import _accel
    from ladder.expr import generate_database
    from ladder.kernels import StringKernelParams, scaled_sqdist, string_kernel_cross
    from ladder.latent import build_codebook, nearest_indices

    db = generate_database(2000, seed=7)
    toks = [s.split() for s in db]
    rng = np.random.default_rng(0)
    cb = build_codebook(db, d=16, seed=7)
    Q = rng.standard_normal((500, 16))
    Z = rng.standard_normal((400, 16))
    ls = np.full(16, 1.3)
    p = StringKernelParams()
    cases = {
        "string_kernel 100x100": lambda: string_kernel_cross(toks[:100], toks[:100], p, symmetric=True),
        "string_kernel 300x50": lambda: string_kernel_cross(toks[100:400], toks[:50], p),
        "nearest 500 q / 2000 db": lambda: nearest_indices(Q, cb.embeddings),
        "sqdist 400x400 sym": lambda: scaled_sqdist(Z, Z, ls, symmetric=True),
    }
    res = {"numba": _accel.HAVE_NUMBA, "cases": {}}
    for name, fn in cases.items():
        t, out = _best_of(fn, repeat)
        res["cases"][name] = {"seconds": t, "value": np.asarray(out, dtype=float).ravel().tolist()}
    print(json.dumps(res))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    a = ap.parse_args()
    if a.child:
        child(a.repeat)
        return 0
    runs = {}
    for flag in ("1", "0"):
        env = dict(os.environ, LADDER_NUMBA=flag)
        out = subprocess.run(
            [sys.executable, __file__, "--child", "--repeat", str(a.repeat)],
            env=env, check=True, capture_output=True, text=True,
        ).stdout
        runs[flag] = json.loads(out.strip().splitlines()[-1])
    if not runs["1"]["numba"]:
        print("numba not importable: both rows use numpy")
    print(f"{'case':28s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speedup':>8s}  max|diff|")
    for name, r1 in runs["1"]["cases"].items():
        r0 = runs["0"]["cases"][name]
        v1, v0 = np.array(r1["value"]), np.array(r0["value"])
        diff = float(np.max(np.abs(v1 - v0))) if v1.size else 0.0
        print(f"{name:28s} {1e3 * r1['seconds']:11.2f} {1e3 * r0['seconds']:11.2f} "
              f"{r0['seconds'] / r1['seconds']:8.1f}  {diff:.2e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
