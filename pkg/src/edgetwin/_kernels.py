"""Compiled inner loops (numba). Pure functions over flat arrays."""

import numpy as np
from numba import njit

# Neighbor slot order used everywhere a 6-slot block appears.
FRONT_SAME, REAR_SAME, FRONT_LEFT, REAR_LEFT, FRONT_RIGHT, REAR_RIGHT = range(6)


@njit(cache=True)
def neighbor_rows(frame_start, x, lane, vid):
    """Nearest front/rear vehicle in the same, left and right lane for every row.

    ``frame_start`` holds block offsets of the frame-sorted rows.  Returns an
    ``(n, 6)`` array of row indices, ``-1`` where the slot is empty.  A vehicle
    at exactly the same x counts as "front" when its id is larger, so the
    relation stays antisymmetric.  Equal distances resolve to the lower id.
    """
    n = x.shape[0]
    out = np.full((n, 6), -1, dtype=np.int64)
    best = np.empty(6)
    for b in range(frame_start.shape[0] - 1):
        s = frame_start[b]
        e = frame_start[b + 1]
        for i in range(s, e):
            for k in range(6):
                best[k] = np.inf
            for j in range(s, e):
                if j == i:
                    continue
                dl = lane[j] - lane[i]
                if dl == 0:
                    side = 0
                elif dl == -1:
                    side = 2
                elif dl == 1:
                    side = 4
                else:
                    continue
                dx = x[j] - x[i]
                if dx > 0.0 or (dx == 0.0 and vid[j] > vid[i]):
                    slot = side
                else:
                    slot = side + 1
                dist = abs(dx)
                cur = out[i, slot]
                if dist < best[slot] or (dist == best[slot] and vid[j] < vid[cur]):
                    best[slot] = dist
                    out[i, slot] = j
    return out


@njit(cache=True)
def best_splits(xs, order, resid, node_of, n_nodes, min_leaf, node_cnt, node_sum, gain_floor):
    """Exact greedy variance-reduction split search for every open node.

    ``xs[f]`` holds column ``f`` in ascending order and ``order[f]`` the
    matching row indices (stable sort).  Rows with ``node_of < 0`` are ignored.
    A candidate must beat ``gain_floor[k]`` strictly, and features/thresholds
    are scanned in ascending order, so ties go to the lowest feature index and
    then the lowest threshold.
    """
    d = xs.shape[0]
    n = xs.shape[1]
    best_gain = gain_floor.copy()
    best_feat = np.full(n_nodes, -1, dtype=np.int64)
    best_thr = np.zeros(n_nodes)
    cnt_l = np.zeros(n_nodes, dtype=np.int64)
    sum_l = np.zeros(n_nodes)
    last = np.zeros(n_nodes)
    parent = np.empty(n_nodes)
    for k in range(n_nodes):
        if node_cnt[k] > 0:
            parent[k] = node_sum[k] * node_sum[k] / node_cnt[k]
        else:
            parent[k] = 0.0
    for f in range(d):
        cnt_l[:] = 0
        sum_l[:] = 0.0
        for p in range(n):
            i = order[f, p]
            k = node_of[i]
            if k < 0:
                continue
            v = xs[f, p]
            c = cnt_l[k]
            if c >= min_leaf and node_cnt[k] - c >= min_leaf and v > last[k]:
                sl = sum_l[k]
                sr = node_sum[k] - sl
                g = sl * sl / c + sr * sr / (node_cnt[k] - c) - parent[k]
                if g > best_gain[k]:
                    best_gain[k] = g
                    best_feat[k] = f
                    t = 0.5 * (last[k] + v)
                    if t >= v:
                        t = last[k]
                    best_thr[k] = t
            cnt_l[k] = c + 1
            sum_l[k] += resid[i]
            last[k] = v
    return best_feat, best_thr, best_gain


@njit(cache=True)
def ensemble_sum(X, feature, threshold, left, right, value, roots):
    """Sum of leaf values over all trees stored back to back in flat arrays."""
    n = X.shape[0]
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for t in range(roots.shape[0]):
            node = roots[t]
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc += value[node]
        out[i] = acc
    return out
