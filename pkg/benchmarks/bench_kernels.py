"""Compare the compiled and numpy kernels on random models.

    python benchmarks/bench_kernels.py            # default grid
    python benchmarks/bench_kernels.py --quick    # small grid, a few seconds

Prints one row per (kernel, d, T): best-of-``repeat`` wall time for each
backend, the speedup, and the largest difference between their outputs.
"""

import argparse
import time

import numpy as np

from dualfilter import kernels
from dualfilter.dual_filter import reduced_observations
from dualfilter.hmm import sample_path
from dualfilter.theorems import random_model


def best_time(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def case(d, m, T, seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, d, m)
    tokens = sample_path(model, T, seed).tokens
    cs = reduced_observations(model, tokens)
    rhos = np.ascontiguousarray(np.broadcast_to(model.prior, (T, d)))
    return np.ascontiguousarray(model.transition), np.ascontiguousarray(model.prior), cs, rhos


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if kernels.compiled_backend is None:
        raise SystemExit("compiled kernels are not built; nothing to compare")
    py, cy = kernels.python_backend, kernels.compiled_backend

    if args.quick:
        grid = [("backward_pass", 8, 64), ("backward_pass", 32, 64),
                ("single_shot", 8, 32), ("single_shot", 32, 32)]
    else:
        grid = [("backward_pass", d, 256) for d in (4, 16, 64, 128, 384)]
        grid += [("single_shot", d, T) for d, T in ((4, 128), (16, 128), (64, 64), (128, 64))]

    print(f"{'kernel':<14} {'d':>4} {'T':>4} {'python s':>10} {'cython s':>10} "
          f"{'speedup':>8} {'max diff':>10}")
    for name, d, T in grid:
        A, mu, cs, rhos = case(d, 5, T, args.seed)
        if name == "backward_pass":
            tp, op = best_time(lambda: py.backward_pass(A, cs, rhos), args.repeat)
            tc, oc = best_time(lambda: cy.backward_pass(A, cs, rhos), args.repeat)
            diff = np.abs(op[0] - oc[0]).max()
        else:
            tp, op = best_time(lambda: py.single_shot(A, mu, cs), args.repeat)
            tc, oc = best_time(lambda: cy.single_shot(A, mu, cs), args.repeat)
            diff = np.abs(op[0] - oc[0]).max()
        print(f"{name:<14} {d:>4} {T:>4} {tp:>10.4f} {tc:>10.4f} {tp / tc:>8.2f} {diff:>10.2e}")


if __name__ == "__main__":
    main()
