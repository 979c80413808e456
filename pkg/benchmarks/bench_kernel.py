"""Compare the compiled kernel with the pure-Python fallback.

Times a full walk (tree growth included) and a regeneration scan on the same
replica with each backend, checks that both produce identical trajectories,
and prints ns/step and the speed-up.

    python3 benchmarks/bench_kernel.py --p 0.6 --steps 200000
"""

import argparse
import time

import numpy as np

from critwalk import _backend, analytics, walker
from critwalk.tree import LazyTree


def time_walk(backend: str, prof, steps: int, replica: int) -> tuple[float, walker.WalkRecord]:
    tree = LazyTree(prof, replica=replica, backend=backend)
    t0 = time.perf_counter()
    rec = walker.run(tree, steps, stride=64)
    return time.perf_counter() - t0, rec


def time_scan(backend: str, rec: walker.WalkRecord, repeat: int = 3) -> float:
    k = _backend.get(backend)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        k.scan_regenerations(rec.depths, rec.eta_t, rec.sib, rec.level_len)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--p", type=float, default=0.6)
    ap.add_argument("--base", default="binary")
    ap.add_argument("--steps", type=int, default=200_000)
    ap.add_argument("--python-steps", type=int, default=None,
                    help="steps for the Python backend (default: same as --steps)")
    ap.add_argument("--replica", type=int, default=0)
    args = ap.parse_args(argv)

    prof = analytics.profile(analytics.named_law(args.base), args.p)
    backends = _backend.available()
    print(f"backends available: {', '.join(backends)}")
    results = {}
    for name in backends:
        n = args.steps if name == "compiled" or args.python_steps is None else args.python_steps
        secs, rec = time_walk(name, prof, n, args.replica)
        scan = time_scan(name, rec)
        results[name] = (n, secs, rec)
        print(f"{name:>9}: walk {n} steps in {secs:.3f} s ({1e9 * secs / n:.1f} ns/step), "
              f"regeneration scan {1e3 * scan:.2f} ms, {rec.tree.n_vertices} vertices")
    if len(results) == 2:
        (nc, sc, rc), (npy, sp, rp) = results["compiled"], results["python"]
        m = min(nc, npy)
        same = np.array_equal(rc.depths[: m + 1], rp.depths[: m + 1])
        print(f"trajectories identical over {m} steps: {same}")
        print(f"speed-up (per step): {(sp / npy) / (sc / nc):.1f}x")


if __name__ == "__main__":
    main()
