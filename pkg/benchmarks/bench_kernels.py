"""Time the tree kernels under numba and under the pure-Python fallback.

    python3 benchmarks/bench_kernels.py           # both backends
    python3 benchmarks/bench_kernels.py --child   # current backend only (JSON)

The fallback is run in a subprocess with GFFWALK_DISABLE_NUMBA=1, since the
backend is fixed at import time. Numba timings exclude the first (compiling) call.
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

SIZES = {"walk_steps": 100_000, "bfs_k": 16, "dfs_G": 200, "escape_trials": 200}


def best_of(fn, repeat):
    fn()  # warm-up, also triggers jit compilation
    out = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t)
    return min(out)


def run_child(repeat):
    from gffwalk import _jit
    from gffwalk.cluster import (ClusterView, escape_count, generation_sizes,
                                 reaches_depth, survival_sample)
    from gffwalk.gff_tree import create_arena
    from gffwalk.walk import run_walk

    def cluster(seed=3):
        return survival_sample(3, 0.0, G=30, seed=seed).cluster

    def walk():
        run_walk(cluster(), SIZES["walk_steps"], seed=1)

    def bfs():
        generation_sizes(ClusterView(create_arena(3, "plus", 2.0, 11), -0.5), SIZES["bfs_k"])

    def dfs():
        reaches_depth(ClusterView(create_arena(3, "plus", 2.0, 12), -0.5), SIZES["dfs_G"])

    def escape():
        escape_count(cluster(), 0, SIZES["escape_trials"], 300, seed=2)

    times = {name: best_of(fn, repeat) for name, fn in
             (("walk", walk), ("bfs", bfs), ("dfs", dfs), ("escape", escape))}
    return {"backend": _jit.backend_name(), "times": times}


def spawn(disable, repeat):
    env = dict(os.environ)
    env["GFFWALK_DISABLE_NUMBA"] = "1" if disable else "0"
    out = subprocess.run([sys.executable, __file__, "--child", "--repeat", str(repeat)],
                         env=env, check=True, capture_output=True, text=True)
    return json.loads(out.stdout)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--child", action="store_true")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if args.child:
        print(json.dumps(run_child(args.repeat)))
        return
    fast, slow = spawn(False, args.repeat), spawn(True, args.repeat)
    print(f"sizes: {SIZES}")
    print(f"{'kernel':8s} {fast['backend']:>10s} {slow['backend']:>10s} {'speedup':>9s}")
    for k, t in fast["times"].items():
        s = slow["times"][k]
        print(f"{k:8s} {t:10.4f} {s:10.4f} {s / t if t > 0 else np.inf:9.1f}x")


if __name__ == "__main__":
    main()
