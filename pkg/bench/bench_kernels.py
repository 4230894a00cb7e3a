"""Benchmark the hot kernels under both backends.

Runs mzmz_count, chain_run and nibble_survivors in this process (numba by
default) and again in a TREEPACK_NO_NUMBA=1 subprocess, checking that the
two backends produce identical outputs before reporting timings.

Usage: python bench/bench_kernels.py [--repeat N]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def workloads():
    rng = np.random.default_rng(7)
    n = 400
    match = np.array(rng.permutation(n), dtype=np.int64)
    badj = rng.random((n, n)) < 0.6
    for i in range(n):
        badj[i, match[i]] = True
    zadj = rng.random((n, n)) < 0.01
    zadj[np.arange(n), match] = False

    n_e, r = 120_000, 3
    edge_off = np.arange(0, (n_e + 1) * r, r, dtype=np.int64)
    edge_verts = rng.integers(0, 9000, size=n_e * r).astype(np.int64)
    act = np.sort(rng.choice(n_e, size=20_000, replace=False)).astype(np.int64)
    return {
        "mzmz_count": (match.copy(), zadj),
        "chain_run": (match.copy(), badj, zadj, 200_000, 1234,
                      200_001, 1, np.empty((0, n), dtype=np.int32)),
        "nibble_survivors": (edge_off, edge_verts, act, 9000),
    }


def run_all(repeat):
    from treepack import kernels
    from treepack._accel import USE_NUMBA

    loads = workloads()
    out = {"backend": "numba" if USE_NUMBA else "python", "results": {}}
    for name, args in loads.items():
        fn = getattr(kernels, name)
        # warm-up triggers JIT compilation; copy mutable state per run
        fresh = [a.copy() if isinstance(a, np.ndarray) else a for a in args]
        val = fn(*fresh)
        best = float("inf")
        for _ in range(repeat):
            fresh = [a.copy() if isinstance(a, np.ndarray) else a
                     for a in args]
            t0 = time.perf_counter()
            val = fn(*fresh)
            best = min(best, time.perf_counter() - t0)
        digest = val.tolist() if isinstance(val, np.ndarray) else int(val)
        if isinstance(digest, list):
            digest = int(np.asarray(digest).sum())
        out["results"][name] = {"best_s": best, "digest": digest}
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--emit-json", action="store_true",
                    help="print machine-readable results and exit")
    args = ap.parse_args()

    mine = run_all(args.repeat)
    if args.emit_json:
        print(json.dumps(mine))
        return 0

    env = dict(os.environ, TREEPACK_NO_NUMBA="1")
    proc = subprocess.run(
        [sys.executable, os.path.abspath(__file__),
         "--repeat", str(args.repeat), "--emit-json"],
        env=env, capture_output=True, text=True, check=True)
    other = json.loads(proc.stdout.strip().splitlines()[-1])

    print(f"{'kernel':<18} {mine['backend']:>10} {other['backend']:>10} "
          f"{'speedup':>8}  agree")
    ok = True
    for name in mine["results"]:
        a = mine["results"][name]
        b = other["results"][name]
        agree = a["digest"] == b["digest"]
        ok &= agree
        speed = b["best_s"] / a["best_s"] if a["best_s"] else float("inf")
        print(f"{name:<18} {a['best_s']:>9.4f}s {b['best_s']:>9.4f}s "
              f"{speed:>7.1f}x  {'yes' if agree else 'NO'}")
    if not ok:
        print("backend outputs disagree", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
