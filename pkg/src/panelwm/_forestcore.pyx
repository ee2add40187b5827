# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled tree-growth kernel.

Operation-for-operation mirror of `_forestcore_py`: same traversal order,
same splitmix64 feature subsampling, same accumulation orders, so trees are
bit-identical across backends.
"""
import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"

cdef unsigned long long GOLDEN = 0x9E3779B97F4A7C15ULL
DEF MAXBINS = 256


cdef inline unsigned long long _mix(unsigned long long z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline unsigned long long _next(unsigned long long* state) nogil:
    state[0] = state[0] + GOLDEN
    return _mix(state[0])


def grow_tree(
    cnp.uint8_t[:, ::1] xbt,
    cnp.float64_t[::1] y,
    cnp.uint8_t[::1] t,
    cnp.int64_t[::1] idx,
    cnp.int32_t[::1] n_bins,
    int max_depth,
    int min_leaf,
    int mtry,
    unsigned long long tree_seed,
    bint causal,
):
    cdef Py_ssize_t d = xbt.shape[0]
    cdef Py_ssize_t m_root = idx.shape[0]
    cdef Py_ssize_t max_nodes = 2 * max(1, m_root // max(min_leaf, 1)) + 1

    feature_arr = np.full(max_nodes, -1, dtype=np.int32)
    bin_arr = np.full(max_nodes, -1, dtype=np.int32)
    left_arr = np.full(max_nodes, -1, dtype=np.int32)
    right_arr = np.full(max_nodes, -1, dtype=np.int32)
    value_arr = np.zeros(max_nodes, dtype=np.float64)
    nnode_arr = np.zeros(max_nodes, dtype=np.int32)
    cdef cnp.int32_t[::1] feature = feature_arr
    cdef cnp.int32_t[::1] split_bin = bin_arr
    cdef cnp.int32_t[::1] left = left_arr
    cdef cnp.int32_t[::1] right = right_arr
    cdef cnp.float64_t[::1] value = value_arr
    cdef cnp.int32_t[::1] n_node = nnode_arr

    # explicit DFS stack: start, end, depth, parent, is_left
    cdef Py_ssize_t cap = 2 * max_nodes + 8
    stack_arr = np.zeros((cap, 5), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] stack = stack_arr
    cdef Py_ssize_t top = 0
    stack[0, 0] = 0
    stack[0, 1] = m_root
    stack[0, 2] = 0
    stack[0, 3] = -1
    stack[0, 4] = 0
    top = 1

    scratch_arr = np.empty(d, dtype=np.int64)
    cdef cnp.int64_t[::1] scratch = scratch_arr
    feats_arr = np.empty(mtry, dtype=np.int64)
    cdef cnp.int64_t[::1] feats = feats_arr
    cnt_arr = np.zeros(MAXBINS, dtype=np.int64)
    sum_arr = np.zeros(MAXBINS, dtype=np.float64)
    cnt1_arr = np.zeros(MAXBINS, dtype=np.int64)
    sum1_arr = np.zeros(MAXBINS, dtype=np.float64)
    cdef cnp.int64_t[::1] cnt = cnt_arr
    cdef cnp.float64_t[::1] sums = sum_arr
    cdef cnp.int64_t[::1] cnt1 = cnt1_arr
    cdef cnp.float64_t[::1] sums1 = sum1_arr
    tmp_arr = np.empty(m_root, dtype=np.int64)
    cdef cnp.int64_t[::1] tmp = tmp_arr

    cdef Py_ssize_t n_nodes = 0, node, start, end, depth, parent, is_left
    cdef Py_ssize_t m, i, j, k, f, b, nb, fi, mid, n_left_cnt
    cdef long long n1, n0, c_l, c1l, c0l, c1r, c0r, n_r_l
    cdef double s_total, s1, s0, y_i, y_min, y_max
    cdef double sl, s1l, s0l, s1r, s0r, tau_l, tau_r, gain, best_gain, best_floor
    cdef double nl_f, nr_f
    cdef Py_ssize_t best_feat, best_bin
    cdef unsigned long long state, r
    cdef cnp.uint8_t bv

    while top > 0:
        top -= 1
        start = stack[top, 0]
        end = stack[top, 1]
        depth = stack[top, 2]
        parent = stack[top, 3]
        is_left = stack[top, 4]
        node = n_nodes
        n_nodes += 1
        if node >= max_nodes:
            raise RuntimeError("tree node budget exceeded")
        if parent >= 0:
            if is_left:
                left[parent] = <cnp.int32_t> node
            else:
                right[parent] = <cnp.int32_t> node
        m = end - start
        n_node[node] = <cnp.int32_t> m

        s_total = 0.0
        y_min = y[idx[start]]
        y_max = y_min
        for i in range(start, end):
            y_i = y[idx[i]]
            s_total += y_i
            if y_i < y_min:
                y_min = y_i
            if y_i > y_max:
                y_max = y_i
        if causal:
            n1 = 0
            s1 = 0.0
            s0 = 0.0
            for i in range(start, end):
                y_i = y[idx[i]]
                if t[idx[i]]:
                    n1 += 1
                    s1 += y_i
                else:
                    s0 += y_i
            n0 = m - n1
            if n1 > 0 and n0 > 0:
                value[node] = s1 / n1 - s0 / n0
            elif parent >= 0:
                value[node] = value[parent]
            else:
                value[node] = 0.0
        else:
            value[node] = s_total / m

        if depth >= max_depth or m < 2 * min_leaf:
            continue
        if y_min == y_max:
            continue

        state = tree_seed ^ ((<unsigned long long> (node + 1)) * GOLDEN)
        for j in range(d):
            scratch[j] = j
        for j in range(mtry):
            r = _next(&state)
            k = j + <Py_ssize_t> (r % <unsigned long long> (d - j))
            scratch[j], scratch[k] = scratch[k], scratch[j]
            feats[j] = scratch[j]

        if causal:
            best_floor = 0.0
        else:
            best_floor = s_total * s_total / m
        best_gain = best_floor
        best_feat = -1
        best_bin = -1

        for fi in range(mtry):
            f = feats[fi]
            nb = n_bins[f]
            for b in range(nb):
                cnt[b] = 0
                sums[b] = 0.0
                cnt1[b] = 0
                sums1[b] = 0.0
            for i in range(start, end):
                bv = xbt[f, idx[i]]
                cnt[bv] += 1
                sums[bv] += y[idx[i]]
            if causal:
                for i in range(start, end):
                    if t[idx[i]]:
                        bv = xbt[f, idx[i]]
                        cnt1[bv] += 1
                        sums1[bv] += y[idx[i]]
            # in-place cumulation over bins
            for b in range(1, nb):
                cnt[b] += cnt[b - 1]
                sums[b] += sums[b - 1]
                if causal:
                    cnt1[b] += cnt1[b - 1]
                    sums1[b] += sums1[b - 1]
            for b in range(nb - 1):
                if cnt[b] == (cnt[b - 1] if b > 0 else 0):
                    continue  # empty bin: same partition as previous
                c_l = cnt[b]
                n_r_l = m - c_l
                if c_l < min_leaf or n_r_l < min_leaf:
                    continue
                nl_f = <double> c_l
                nr_f = <double> n_r_l
                if causal:
                    c1l = cnt1[b]
                    c0l = c_l - c1l
                    c1r = n1 - c1l
                    c0r = n0 - c0l
                    # causal splits need min_leaf per arm per side, or leaf
                    # effects are too noisy to average
                    if c1l < min_leaf or c0l < min_leaf or c1r < min_leaf or c0r < min_leaf:
                        continue
                    s1l = sums1[b]
                    s0l = sums[b] - s1l
                    s1r = sums1[nb - 1] - s1l
                    s0r = (sums[nb - 1] - sums1[nb - 1]) - s0l
                    tau_l = s1l / c1l - s0l / c0l
                    tau_r = s1r / c1r - s0r / c0r
                    gain = nl_f * nr_f / (nl_f + nr_f) * (tau_l - tau_r) * (tau_l - tau_r)
                else:
                    sl = sums[b]
                    s1r = sums[nb - 1] - sl
                    gain = sl * sl / nl_f + s1r * s1r / nr_f
                if gain > best_gain:
                    best_gain = gain
                    best_feat = f
                    best_bin = b

        if best_feat < 0:
            continue
        feature[node] = <cnp.int32_t> best_feat
        split_bin[node] = <cnp.int32_t> best_bin

        # stable partition via temp buffer
        n_left_cnt = 0
        for i in range(start, end):
            if xbt[best_feat, idx[i]] <= best_bin:
                tmp[n_left_cnt] = idx[i]
                n_left_cnt += 1
        j = n_left_cnt
        for i in range(start, end):
            if xbt[best_feat, idx[i]] > best_bin:
                tmp[j] = idx[i]
                j += 1
        for i in range(m):
            idx[start + i] = tmp[i]
        mid = start + n_left_cnt

        stack[top, 0] = mid
        stack[top, 1] = end
        stack[top, 2] = depth + 1
        stack[top, 3] = node
        stack[top, 4] = 0
        top += 1
        stack[top, 0] = start
        stack[top, 1] = mid
        stack[top, 2] = depth + 1
        stack[top, 3] = node
        stack[top, 4] = 1
        top += 1

    sl_end = n_nodes
    return (
        feature_arr[:sl_end].copy(),
        bin_arr[:sl_end].copy(),
        left_arr[:sl_end].copy(),
        right_arr[:sl_end].copy(),
        value_arr[:sl_end].copy(),
        nnode_arr[:sl_end].copy(),
    )


def apply_tree(
    cnp.float64_t[:, ::1] x,
    cnp.int32_t[::1] feature,
    cnp.float64_t[::1] threshold,
    cnp.int32_t[::1] left,
    cnp.int32_t[::1] right,
):
    cdef Py_ssize_t n = x.shape[0]
    out_arr = np.zeros(n, dtype=np.int32)
    cdef cnp.int32_t[::1] out = out_arr
    cdef Py_ssize_t i
    cdef cnp.int32_t node
    with nogil:
        for i in range(n):
            node = 0
            while feature[node] >= 0:
                if x[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[i] = node
    return out_arr


def predict_tree(x, feature, threshold, left, right, value):
    return np.asarray(value)[apply_tree(x, feature, threshold, left, right)]
