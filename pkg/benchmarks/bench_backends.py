"""Compiled core vs NumPy fallback on the hot kernels.

    python benchmarks/bench_backends.py [--n 2000 5000] [--m 10] [--reps 5]

Times factor construction, applying L, the back-solve and growing one
RF-GLS tree under each available backend and prints a table with the
speedup of the compiled core.
"""
import argparse
import statistics
import time

import numpy as np

from nngp_chol import (
    CovarianceSpec,
    _backend,
    apply_factor,
    backsolve_factor,
    build_factor,
    build_neighbor_graph,
    order_locations,
)
from nngp_chol.rfgls import ForestHyper, build_tree


def timeit(fn, reps):
    out = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return statistics.median(out)


def cases(n, m, seed):
    rng = np.random.default_rng(seed)
    locs = order_locations(rng.uniform(size=(n, 2)), "coordinate")
    graph = build_neighbor_graph(locs, m)
    spec = CovarianceSpec("exponential", 1.0, 5.0, 0.1)
    chol = build_factor(locs, graph, spec, "response")
    v = rng.normal(size=n)
    ntree = min(n, 500)
    X = rng.uniform(size=(ntree, 3))
    y = X[:, 0] + rng.normal(size=ntree)
    tlocs = order_locations(rng.uniform(size=(ntree, 2)), "coordinate")
    tree_chol = build_factor(tlocs, build_neighbor_graph(tlocs, m), spec, "response")
    hyper = ForestHyper(n_trees=1, min_node_size=5, mtry=3)
    return {
        "factor_rows": lambda: build_factor(locs, graph, spec, "response"),
        "apply": lambda: apply_factor(chol, v),
        "backsolve": lambda: backsolve_factor(chol, v),
        f"build_tree (n={ntree})": lambda: build_tree(X, y, tree_chol, None, hyper,
                                                      np.random.default_rng(0)),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[2000, 5000])
    ap.add_argument("--m", type=int, default=10)
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    backends = _backend.available()
    print(f"backends: {', '.join(backends)}; median of {args.reps} runs, seconds")
    header = f"{'kernel':<24}{'n':>7}" + "".join(f"{b:>12}" for b in backends)
    if "cython" in backends:
        header += f"{'speedup':>10}"
    print(header)
    for n in args.n:
        for label, fn in cases(n, args.m, args.seed).items():
            times = {}
            for b in backends:
                with _backend.use_backend(b):
                    fn()  # warm up
                    times[b] = timeit(fn, args.reps)
            line = f"{label:<24}{n:>7}" + "".join(f"{times[b]:>12.5f}" for b in backends)
            if "cython" in times:
                line += f"{times['python'] / times['cython']:>9.1f}x"
            print(line)


if __name__ == "__main__":
    main()
