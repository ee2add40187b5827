"""Random forests on binned features, with a compiled hot kernel.

Tree growth (histogram split search over <=256 bins per feature) dominates
the runtime of the uplift baselines, so it lives in a Cython extension with
a pure-numpy fallback selected at import; both backends produce
bit-identical trees. `PANELWM_FOREST_BACKEND=python|cython` overrides the
automatic choice. See benchmarks/bench_forest.py for the speed comparison.

Modes: ``regression`` (mean leaf target), ``probability`` (same kernel on
0/1 labels, leaf class frequency), and ``causal-honest`` (structure learned
on half the data with a treatment-effect-heterogeneity criterion, leaf
effects re-estimated on the other half; single-arm leaves fall back to the
nearest ancestor with both arms).
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .rng import stream, subseed

if os.environ.get("PANELWM_FOREST_BACKEND", "") == "python":
    from . import _forestcore_py as _core
elif os.environ.get("PANELWM_FOREST_BACKEND", "") == "cython":
    from . import _forestcore as _core  # hard requirement when forced
else:
    try:
        from . import _forestcore as _core
    except ImportError:  # pragma: no cover - build-env dependent
        from . import _forestcore_py as _core

__all__ = [
    "ForestParams",
    "ForestModel",
    "Tree",
    "rf_fit",
    "rf_predict",
    "causal_forest_fit",
    "backend_name",
    "MAX_BINS",
]

MAX_BINS = 256
MODES = ("regression", "probability", "causal-honest")


def backend_name() -> str:
    return _core.BACKEND


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 200
    max_depth: int = 12
    min_leaf: int = 20
    mtry: int | None = None  # None -> round(sqrt(d))
    honest_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 1 or self.min_leaf < 1:
            raise ValueError("n_trees, max_depth and min_leaf must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ForestParams":
        return cls(**d)


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_node: np.ndarray


@dataclass
class ForestModel:
    mode: str
    trees: list
    n_features: int
    params: ForestParams


def _bin_features(x: np.ndarray):
    """Per-feature binning: exact bins when a feature has <=256 distinct
    values (the usual case here: binary indicators), quantile bins above.

    Returns (xbt, edges, n_bins): (d, n) uint8 bin indices, per-feature
    split thresholds, and per-feature bin counts. bin(x) <= b iff
    x <= edges[b], matching the kernel's left-branch rule.
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    xbt = np.empty((d, n), dtype=np.uint8)
    edges = []
    n_bins = np.empty(d, dtype=np.int32)
    for f in range(d):
        col = x[:, f]
        uniq = np.unique(col)
        if uniq.size <= MAX_BINS:
            e = (uniq[:-1] + uniq[1:]) / 2.0
        else:
            qs = np.quantile(col, np.linspace(0.0, 1.0, MAX_BINS + 1)[1:-1])
            e = np.unique(qs)
        xbt[f] = np.searchsorted(e, col, side="left")
        edges.append(e)
        n_bins[f] = e.size + 1
    return xbt, edges, n_bins


def _resolve_mtry(params: ForestParams, d: int) -> int:
    if params.mtry is not None:
        return max(1, min(int(params.mtry), d))
    return max(1, min(int(round(np.sqrt(d))), d))


def _to_tree(raw, edges) -> Tree:
    feature, split_bin, left, right, value, n_node = raw
    threshold = np.zeros(feature.size, dtype=np.float64)
    for i in range(feature.size):
        if feature[i] >= 0:
            threshold[i] = edges[feature[i]][split_bin[i]]
    return Tree(feature, threshold, left, right, value, n_node)


def rf_fit(x, y, mode: str = "regression", params: ForestParams | None = None) -> ForestModel:
    """Bootstrap-bagged CART with per-node feature subsampling."""
    if mode not in ("regression", "probability"):
        raise ValueError(f"rf_fit mode must be regression or probability, got {mode!r}")
    params = params or ForestParams()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.ndim != 2 or x.shape[0] != y.size:
        raise ValueError("x must be (n, d) with matching y")
    n, d = x.shape
    if n == 0:
        raise ValueError("empty training data")
    if n < params.min_leaf:
        raise ValueError(f"need at least min_leaf={params.min_leaf} samples")
    if mode == "probability" and not np.all((y == 0) | (y == 1)):
        raise ValueError("probability mode requires binary targets")
    xbt, edges, n_bins = _bin_features(x)
    mtry = _resolve_mtry(params, d)
    t_dummy = np.zeros(n, dtype=np.uint8)
    trees = []
    for i in range(params.n_trees):
        boot = stream(params.seed, "rf-bootstrap", i).integers(0, n, size=n).astype(np.int64)
        raw = _core.grow_tree(
            xbt, y, t_dummy, boot, n_bins,
            params.max_depth, params.min_leaf, mtry,
            subseed(params.seed, "rf-grow", i), False,
        )
        trees.append(_to_tree(raw, edges))
    return ForestModel(mode, trees, d, params)


def rf_predict(model: ForestModel, x) -> np.ndarray:
    x = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    if x.shape[1] != model.n_features:
        raise ValueError("feature dimension mismatch")
    out = np.zeros(x.shape[0], dtype=np.float64)
    for tree in model.trees:
        out += _core.predict_tree(x, tree.feature, tree.threshold, tree.left, tree.right, tree.value)
    out /= len(model.trees)
    return out


# ---------------------------------------------------------------------------
# honest causal forest
# ---------------------------------------------------------------------------

def _parents(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    parent = np.full(left.size, -1, dtype=np.int64)
    for i in range(left.size):
        if left[i] >= 0:
            parent[left[i]] = i
            parent[right[i]] = i
    return parent


def _honest_values(tree: Tree, x_est, t_est, y_est) -> np.ndarray:
    """Re-estimate node effects on the held-out half.

    Leaf stats aggregate upward; any node lacking one arm inherits the
    nearest ancestor estimate (the root always has both arms by the fit
    precondition).
    """
    n_nodes = tree.feature.size
    leaf = _core.apply_tree(x_est, tree.feature, tree.threshold, tree.left, tree.right)
    n1 = np.bincount(leaf, weights=t_est.astype(np.float64), minlength=n_nodes)
    n_all = np.bincount(leaf, minlength=n_nodes).astype(np.float64)
    s1 = np.bincount(leaf, weights=y_est * t_est, minlength=n_nodes)
    s_all = np.bincount(leaf, weights=y_est, minlength=n_nodes)
    n0 = n_all - n1
    s0 = s_all - s1
    # children always carry larger ids than their parent
    for i in range(n_nodes - 1, -1, -1):
        if tree.left[i] >= 0:
            for arr in (n1, n0, s1, s0):
                arr[i] = arr[tree.left[i]] + arr[tree.right[i]]
    values = np.zeros(n_nodes, dtype=np.float64)
    parent = _parents(tree.left, tree.right)
    for i in range(n_nodes):
        if n1[i] >= 1 and n0[i] >= 1:
            values[i] = s1[i] / n1[i] - s0[i] / n0[i]
        else:
            values[i] = values[parent[i]] if parent[i] >= 0 else 0.0
    return values


def causal_forest_fit(x, t, y, params: ForestParams | None = None) -> ForestModel:
    """Honest causal forest: per tree, a random half learns the structure
    (heterogeneity splits) and the other half estimates leaf effects."""
    params = params or ForestParams()
    x = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    t = np.asarray(t).astype(np.uint8).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n, d = x.shape
    if n == 0:
        raise ValueError("empty training data")
    if t.min() == t.max():
        raise ValueError("both treatment arms must be present")
    xbt, edges, n_bins = _bin_features(x)
    mtry = _resolve_mtry(params, d)
    n_str = int(round(n * params.honest_fraction))
    trees = []
    for i in range(params.n_trees):
        perm = stream(params.seed, "cf-split", i).permutation(n)
        idx_str = np.sort(perm[:n_str]).astype(np.int64)
        idx_est = np.sort(perm[n_str:])
        raw = _core.grow_tree(
            xbt, y, t, idx_str, n_bins,
            params.max_depth, params.min_leaf, mtry,
            subseed(params.seed, "cf-grow", i), True,
        )
        tree = _to_tree(raw, edges)
        tree.value = _honest_values(tree, x[idx_est], t[idx_est], y[idx_est])
        trees.append(tree)
    return ForestModel("causal-honest", trees, d, params)
