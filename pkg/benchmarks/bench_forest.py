#!/usr/bin/env python3
"""Forest kernel benchmark: compiled extension vs pure-numpy fallback.

Fits regression and honest-causal forests on data shaped like the uplift
stage's real workload (binary features) at a few sizes, times both
backends, and verifies the trees agree. Run:

    python benchmarks/bench_forest.py [--quick]
"""
import argparse
import time

import numpy as np

from panelwm import forest
from panelwm import _forestcore_py as core_py

try:
    from panelwm import _forestcore as core_cy
except ImportError:
    core_cy = None


def make_data(n, d, seed):
    rng = np.random.default_rng(seed)
    x = (rng.random((n, d)) < 0.35).astype(float)
    logits = x @ rng.normal(0, 0.4, d) - 0.8
    t = (rng.random(n) < 0.3).astype(int)
    y = (rng.random(n) < 1 / (1 + np.exp(-(logits + 0.4 * t)))).astype(float)
    return x, t, y


def time_fit(backend, x, t, y, mode, params):
    forest._core = backend
    start = time.perf_counter()
    if mode == "causal":
        model = forest.causal_forest_fit(x, t, y, params)
    else:
        model = forest.rf_fit(x, y, mode, params)
    elapsed = time.perf_counter() - start
    start = time.perf_counter()
    pred = forest.rf_predict(model, x[:20000])
    pred_time = time.perf_counter() - start
    return model, pred, elapsed, pred_time


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true", help="smaller sizes")
    args = parser.parse_args()

    if core_cy is None:
        print("compiled kernel not available; nothing to compare")
        return

    sizes = [(20000, 40, 8)] if args.quick else [(20000, 76, 50), (100000, 76, 50), (312320, 76, 100)]
    print(f"{'rows':>8} {'trees':>6} {'mode':>12} {'cython fit':>11} {'python fit':>11} {'speedup':>8} {'agree':>6}")
    default = forest._core
    try:
        for n, d, n_trees in sizes:
            x, t, y = make_data(n, d, seed=n)
            params = forest.ForestParams(n_trees=n_trees, max_depth=12, min_leaf=20, seed=1)
            for mode in ("probability", "causal"):
                _, pred_cy, fit_cy, _ = time_fit(core_cy, x, t, y, mode, params)
                _, pred_py, fit_py, _ = time_fit(core_py, x, t, y, mode, params)
                agree = bool(np.array_equal(pred_cy, pred_py))
                print(
                    f"{n:>8} {n_trees:>6} {mode:>12} {fit_cy:>10.2f}s {fit_py:>10.2f}s "
                    f"{fit_py / fit_cy:>7.1f}x {str(agree):>6}"
                )
    finally:
        forest._core = default


if __name__ == "__main__":
    main()
