"""Pure-numpy tree-growth kernel (fallback backend).

Mirrors the compiled `_forestcore` extension step for step: identical
node traversal order, identical splitmix64 feature subsampling, and
accumulation orders chosen so both backends produce bit-identical trees
(histograms accumulate in sample order, split scans cumulate in bin order).
"""
from __future__ import annotations

import numpy as np

BACKEND = "python"

_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(state: int):
    state = (state + _GOLDEN) & _M64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    z = z ^ (z >> 31)
    return state, z


def _sample_features(d: int, mtry: int, state: int):
    """Partial Fisher-Yates draw of ``mtry`` distinct features."""
    scratch = np.arange(d, dtype=np.int64)
    for j in range(mtry):
        state, r = _splitmix64(state)
        k = j + int(r % (d - j))
        scratch[j], scratch[k] = scratch[k], scratch[j]
    return scratch[:mtry], state


def grow_tree(
    xbt: np.ndarray,
    y: np.ndarray,
    t: np.ndarray,
    idx: np.ndarray,
    n_bins: np.ndarray,
    max_depth: int,
    min_leaf: int,
    mtry: int,
    tree_seed: int,
    causal: bool,
):
    """Grow one CART tree on binned features.

    ``xbt`` is (d, n) uint8 bin indices; ``idx`` the root's sample indices
    (it is permuted in place by the partition steps). Split gain is the
    variance-reduction proxy sL^2/nL + sR^2/nR in regression mode and the
    heterogeneity criterion nL*nR/(nL+nR) * (tauL - tauR)^2 in causal mode.
    Returns (feature, bin, left, right, value, n_node) arrays; feature == -1
    marks leaves.
    """
    d = xbt.shape[0]
    m_root = idx.shape[0]
    max_nodes = 2 * max(1, m_root // max(min_leaf, 1)) + 1
    feature = np.full(max_nodes, -1, dtype=np.int32)
    split_bin = np.full(max_nodes, -1, dtype=np.int32)
    left = np.full(max_nodes, -1, dtype=np.int32)
    right = np.full(max_nodes, -1, dtype=np.int32)
    value = np.zeros(max_nodes, dtype=np.float64)
    n_node = np.zeros(max_nodes, dtype=np.int32)

    # stack rows: (start, end, depth, parent, is_left)
    stack = [(0, m_root, 0, -1, 0)]
    n_nodes = 0
    while stack:
        start, end, depth, parent, is_left = stack.pop()
        node = n_nodes
        n_nodes += 1
        if node >= max_nodes:
            raise RuntimeError("tree node budget exceeded")
        if parent >= 0:
            if is_left:
                left[parent] = node
            else:
                right[parent] = node
        rows = idx[start:end]
        m = rows.shape[0]
        n_node[node] = m
        y_node = y[rows]
        # sample-order sums (cumsum is sequential, matching the C loop)
        s_total = float(np.cumsum(y_node)[-1]) if m else 0.0
        if causal:
            t_node = t[rows]
            n1 = int(t_node.sum())
            n0 = m - n1
            s1 = float(np.cumsum(y_node[t_node == 1])[-1]) if n1 else 0.0
            s0 = float(np.cumsum(y_node[t_node == 0])[-1]) if n0 else 0.0
            if n1 > 0 and n0 > 0:
                value[node] = s1 / n1 - s0 / n0
            else:
                value[node] = value[parent] if parent >= 0 else 0.0
        else:
            value[node] = s_total / m

        if depth >= max_depth or m < 2 * min_leaf:
            continue
        if float(np.min(y_node)) == float(np.max(y_node)):
            continue

        state = (tree_seed ^ ((node + 1) * _GOLDEN)) & _M64
        feats, state = _sample_features(d, mtry, state)
        nb = int(n_bins[feats].max())
        bins_sub = xbt[feats[:, None], rows[None, :]].astype(np.int64)
        flat = bins_sub + (np.arange(mtry, dtype=np.int64) * nb)[:, None]
        counts = np.bincount(flat.ravel(), minlength=mtry * nb).reshape(mtry, nb)
        sums = np.bincount(
            flat.ravel(), weights=np.broadcast_to(y_node, (mtry, m)).ravel(), minlength=mtry * nb
        ).reshape(mtry, nb)
        cnt_l = np.cumsum(counts, axis=1)
        sum_l = np.cumsum(sums, axis=1)
        n_l = cnt_l.astype(np.float64)
        n_r = (m - cnt_l).astype(np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            if causal:
                mask1 = (t_node == 1)
                flat1 = bins_sub[:, mask1] + (np.arange(mtry, dtype=np.int64) * nb)[:, None]
                counts1 = np.bincount(flat1.ravel(), minlength=mtry * nb).reshape(mtry, nb)
                sums1 = np.bincount(
                    flat1.ravel(),
                    weights=np.broadcast_to(y_node[mask1], (mtry, int(mask1.sum()))).ravel(),
                    minlength=mtry * nb,
                ).reshape(mtry, nb)
                c1l = np.cumsum(counts1, axis=1)
                s1l = np.cumsum(sums1, axis=1)
                c0l = cnt_l - c1l
                s0l = sum_l - s1l
                c1r = n1 - c1l
                c0r = n0 - c0l
                s1r = s1l[:, -1:] - s1l
                s0r = s0l[:, -1:] - s0l
                tau_l = s1l / c1l - s0l / c0l
                tau_r = s1r / c1r - s0r / c0r
                gain = n_l * n_r / (n_l + n_r) * (tau_l - tau_r) ** 2
                # causal splits need min_leaf per arm per side, or leaf
                # effects are too noisy to average
                valid = (
                    (counts > 0)
                    & (cnt_l >= min_leaf)
                    & (m - cnt_l >= min_leaf)
                    & (c1l >= min_leaf)
                    & (c0l >= min_leaf)
                    & (c1r >= min_leaf)
                    & (c0r >= min_leaf)
                )
                best_floor = 0.0
            else:
                s_r = sum_l[:, -1:] - sum_l
                gain = sum_l * sum_l / n_l + s_r * s_r / n_r
                valid = (counts > 0) & (cnt_l >= min_leaf) & (m - cnt_l >= min_leaf)
                best_floor = s_total * s_total / m
        valid[:, nb - 1] = False
        # bins beyond a feature's own bin count are empty and already invalid
        gain = np.where(valid, gain, -np.inf)
        flat_best = int(np.argmax(gain))
        best_gain = float(gain.ravel()[flat_best])
        if not (best_gain > best_floor):
            continue
        f_pos, b_best = divmod(flat_best, nb)
        f_best = int(feats[f_pos])
        feature[node] = f_best
        split_bin[node] = b_best
        go_left = xbt[f_best][rows] <= b_best
        n_left = int(np.count_nonzero(go_left))
        idx[start:end] = np.concatenate([rows[go_left], rows[~go_left]])
        mid = start + n_left
        stack.append((mid, end, depth + 1, node, 0))
        stack.append((start, mid, depth + 1, node, 1))

    sl = slice(0, n_nodes)
    return (
        feature[sl].copy(),
        split_bin[sl].copy(),
        left[sl].copy(),
        right[sl].copy(),
        value[sl].copy(),
        n_node[sl].copy(),
    )


def apply_tree(x: np.ndarray, feature: np.ndarray, threshold: np.ndarray, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Leaf index for every row of ``x`` (float features, x <= thr goes left)."""
    n = x.shape[0]
    node = np.zeros(n, dtype=np.int32)
    active = feature[node] >= 0
    while np.any(active):
        idx = np.flatnonzero(active)
        nd = node[idx]
        vals = x[idx, feature[nd]]
        node[idx] = np.where(vals <= threshold[nd], left[nd], right[nd])
        active[idx] = feature[node[idx]] >= 0
    return node


def predict_tree(x, feature, threshold, left, right, value) -> np.ndarray:
    return value[apply_tree(x, feature, threshold, left, right)]
