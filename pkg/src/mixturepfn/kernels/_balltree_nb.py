"""Jitted ball-tree kernels.

Flat-array tree: node i has children 2i+1 / 2i+2, node ranges index into a
shared permutation array, leaves occupy the last level. Queries keep the
k best candidates in a max-heap ordered lexicographically by (squared
distance, row index) so ties always resolve to the lower row index, and
prune a node only when its lower bound strictly exceeds the current worst
candidate. Distances are compared squared; one sqrt per visited node for
the triangle-inequality bound, one pass at the end for reported distances.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _partition(points, idx, left0, right0, dim, pivot_abs):
    # quickselect on idx[left0:right0+1] keyed by points[., dim];
    # afterwards idx[pivot_abs] is in sorted position within the range
    left = left0
    right = right0
    while True:
        mid = left
        for t in range(left, right):
            if points[idx[t], dim] < points[idx[right], dim]:
                tmp = idx[t]
                idx[t] = idx[mid]
                idx[mid] = tmp
                mid += 1
        tmp = idx[mid]
        idx[mid] = idx[right]
        idx[right] = tmp
        if mid == pivot_abs:
            return
        elif mid < pivot_abs:
            left = mid + 1
        else:
            right = mid - 1


@njit(cache=True)
def build(points, idx, node_start, node_end, node_is_leaf, node_radius,
          node_centroid):
    n_nodes = node_start.shape[0]
    M, d = points.shape
    half = n_nodes // 2
    node_start[0] = 0
    node_end[0] = M
    for i_node in range(n_nodes):
        if i_node > 0:
            parent = (i_node - 1) // 2
            s = node_start[parent]
            e = node_end[parent]
            mid = (s + e) // 2
            if i_node % 2 == 1:
                node_start[i_node] = s
                node_end[i_node] = mid
            else:
                node_start[i_node] = mid
                node_end[i_node] = e
        s = node_start[i_node]
        e = node_end[i_node]
        n_pts = e - s
        for j in range(d):
            node_centroid[i_node, j] = 0.0
        for t in range(s, e):
            p = idx[t]
            for j in range(d):
                node_centroid[i_node, j] += points[p, j]
        for j in range(d):
            node_centroid[i_node, j] /= n_pts
        r2max = 0.0
        for t in range(s, e):
            p = idx[t]
            acc = 0.0
            for j in range(d):
                diff = points[p, j] - node_centroid[i_node, j]
                acc += diff * diff
            if acc > r2max:
                r2max = acc
        node_radius[i_node] = np.sqrt(r2max)
        if i_node < half:
            node_is_leaf[i_node] = 0
            best_dim = 0
            best_spread = -1.0
            for j in range(d):
                lo = points[idx[s], j]
                hi = lo
                for t in range(s + 1, e):
                    v = points[idx[t], j]
                    if v < lo:
                        lo = v
                    elif v > hi:
                        hi = v
                spread = hi - lo
                if spread > best_spread:
                    best_spread = spread
                    best_dim = j
            _partition(points, idx, s, e - 1, best_dim, (s + e) // 2)
        else:
            node_is_leaf[i_node] = 1


@njit(cache=True, inline="always")
def _heap_greater(d1, i1, d2, i2):
    if d1 > d2:
        return True
    if d1 < d2:
        return False
    return i1 > i2


@njit(cache=True)
def _sift_down(heap_d, heap_i, n, root):
    while True:
        child = 2 * root + 1
        if child >= n:
            return
        if child + 1 < n and _heap_greater(heap_d[child + 1], heap_i[child + 1],
                                           heap_d[child], heap_i[child]):
            child += 1
        if _heap_greater(heap_d[child], heap_i[child],
                         heap_d[root], heap_i[root]):
            td = heap_d[root]
            ti = heap_i[root]
            heap_d[root] = heap_d[child]
            heap_i[root] = heap_i[child]
            heap_d[child] = td
            heap_i[child] = ti
            root = child
        else:
            return


@njit(cache=True)
def _sift_up(heap_d, heap_i, pos):
    while pos > 0:
        parent = (pos - 1) // 2
        if _heap_greater(heap_d[pos], heap_i[pos],
                         heap_d[parent], heap_i[parent]):
            td = heap_d[parent]
            ti = heap_i[parent]
            heap_d[parent] = heap_d[pos]
            heap_i[parent] = heap_i[pos]
            heap_d[pos] = td
            heap_i[pos] = ti
            pos = parent
        else:
            return


@njit(cache=True)
def knn_query(points, idx, node_start, node_end, node_is_leaf, node_radius,
              node_centroid, q, k, out_i, out_d):
    d = points.shape[1]
    heap_d = np.empty(k, np.float64)
    heap_i = np.empty(k, np.int64)
    heap_n = 0
    # stack depth is bounded by 2 * tree levels; 130 covers any int64 size
    stack_node = np.empty(130, np.int64)
    stack_lb = np.empty(130, np.float64)
    count = 0

    dc = 0.0
    for j in range(d):
        diff = q[j] - node_centroid[0, j]
        dc += diff * diff
    count += 1
    lb = np.sqrt(dc) - node_radius[0]
    if lb < 0.0:
        lb = 0.0
    stack_node[0] = 0
    stack_lb[0] = lb
    top = 1

    while top > 0:
        top -= 1
        i_node = stack_node[top]
        lb = stack_lb[top]
        if heap_n == k and lb * lb > heap_d[0]:
            continue
        if node_is_leaf[i_node] == 1:
            for t in range(node_start[i_node], node_end[i_node]):
                p = idx[t]
                dist2 = 0.0
                for j in range(d):
                    diff = q[j] - points[p, j]
                    dist2 += diff * diff
                count += 1
                if heap_n < k:
                    heap_d[heap_n] = dist2
                    heap_i[heap_n] = p
                    heap_n += 1
                    _sift_up(heap_d, heap_i, heap_n - 1)
                elif _heap_greater(heap_d[0], heap_i[0], dist2, p):
                    heap_d[0] = dist2
                    heap_i[0] = p
                    _sift_down(heap_d, heap_i, heap_n, 0)
        else:
            c1 = 2 * i_node + 1
            c2 = c1 + 1
            dc1 = 0.0
            dc2 = 0.0
            for j in range(d):
                diff1 = q[j] - node_centroid[c1, j]
                dc1 += diff1 * diff1
                diff2 = q[j] - node_centroid[c2, j]
                dc2 += diff2 * diff2
            count += 2
            lb1 = np.sqrt(dc1) - node_radius[c1]
            if lb1 < 0.0:
                lb1 = 0.0
            lb2 = np.sqrt(dc2) - node_radius[c2]
            if lb2 < 0.0:
                lb2 = 0.0
            # push farther child first so the nearer one pops next
            if lb1 <= lb2:
                stack_node[top] = c2
                stack_lb[top] = lb2
                top += 1
                stack_node[top] = c1
                stack_lb[top] = lb1
                top += 1
            else:
                stack_node[top] = c1
                stack_lb[top] = lb1
                top += 1
                stack_node[top] = c2
                stack_lb[top] = lb2
                top += 1

    # heapsort: ascending by (distance, index)
    n = heap_n
    for m in range(n - 1, 0, -1):
        td = heap_d[0]
        ti = heap_i[0]
        heap_d[0] = heap_d[m]
        heap_i[0] = heap_i[m]
        heap_d[m] = td
        heap_i[m] = ti
        _sift_down(heap_d, heap_i, m, 0)
    for t in range(n):
        out_i[t] = heap_i[t]
        out_d[t] = np.sqrt(heap_d[t])
    return count


@njit(cache=True)
def knn_query_batch(points, idx, node_start, node_end, node_is_leaf,
                    node_radius, node_centroid, queries, k, out_i, out_d,
                    out_counts):
    for r in range(queries.shape[0]):
        out_counts[r] = knn_query(points, idx, node_start, node_end,
                                  node_is_leaf, node_radius, node_centroid,
                                  queries[r], k, out_i[r], out_d[r])
