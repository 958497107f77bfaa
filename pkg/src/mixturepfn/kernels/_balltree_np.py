"""Pure-numpy ball-tree kernels: the no-JIT fallback.

Same flat tree layout as the jitted build. Traversal runs at Python level,
leaf scans and the running top-k merge are vectorized. Results are
identical to the jitted kernels (exact k-NN, ties to the lower row index);
the tree itself may partition equal-keyed points differently, so distance
counters are comparable but not bit-equal across backends.
"""

from __future__ import annotations

import numpy as np


def build(points, idx, node_start, node_end, node_is_leaf, node_radius,
          node_centroid):
    n_nodes = node_start.shape[0]
    M = points.shape[0]
    half = n_nodes // 2
    node_start[0] = 0
    node_end[0] = M
    for i_node in range(n_nodes):
        if i_node > 0:
            parent = (i_node - 1) // 2
            s, e = node_start[parent], node_end[parent]
            mid = (s + e) // 2
            if i_node % 2 == 1:
                node_start[i_node], node_end[i_node] = s, mid
            else:
                node_start[i_node], node_end[i_node] = mid, e
        s, e = node_start[i_node], node_end[i_node]
        sub = idx[s:e]
        pts = points[sub]
        centroid = pts.mean(axis=0)
        node_centroid[i_node] = centroid
        node_radius[i_node] = np.sqrt(
            np.max(((pts - centroid) ** 2).sum(axis=1)))
        if i_node < half:
            node_is_leaf[i_node] = 0
            spread = pts.max(axis=0) - pts.min(axis=0)
            dim = int(np.argmax(spread))
            mid = (s + e) // 2
            order = np.argpartition(points[sub, dim], mid - s)
            idx[s:e] = sub[order]
        else:
            node_is_leaf[i_node] = 1


def knn_query(points, idx, node_start, node_end, node_is_leaf, node_radius,
              node_centroid, q, k, out_i, out_d):
    count = 0
    best_d = np.empty(0)
    best_i = np.empty(0, np.int64)

    dc = np.sqrt(((q - node_centroid[0]) ** 2).sum())
    count += 1
    stack = [(0, max(0.0, dc - node_radius[0]))]
    while stack:
        i_node, lb = stack.pop()
        if best_d.shape[0] == k and lb * lb > best_d[-1]:
            continue
        if node_is_leaf[i_node]:
            sub = idx[node_start[i_node]:node_end[i_node]]
            d2 = ((points[sub] - q) ** 2).sum(axis=1)
            count += sub.shape[0]
            cand_d = np.concatenate((best_d, d2))
            cand_i = np.concatenate((best_i, sub))
            order = np.lexsort((cand_i, cand_d))[:k]
            best_d = cand_d[order]
            best_i = cand_i[order]
        else:
            c1 = 2 * i_node + 1
            c2 = c1 + 1
            dc1 = np.sqrt(((q - node_centroid[c1]) ** 2).sum())
            dc2 = np.sqrt(((q - node_centroid[c2]) ** 2).sum())
            count += 2
            lb1 = max(0.0, dc1 - node_radius[c1])
            lb2 = max(0.0, dc2 - node_radius[c2])
            if lb1 <= lb2:
                stack.append((c2, lb2))
                stack.append((c1, lb1))
            else:
                stack.append((c1, lb1))
                stack.append((c2, lb2))

    n = best_d.shape[0]
    out_i[:n] = best_i
    out_d[:n] = np.sqrt(best_d)
    return count


def knn_query_batch(points, idx, node_start, node_end, node_is_leaf,
                    node_radius, node_centroid, queries, k, out_i, out_d,
                    out_counts):
    for r in range(queries.shape[0]):
        out_counts[r] = knn_query(points, idx, node_start, node_end,
                                  node_is_leaf, node_radius, node_centroid,
                                  queries[r], k, out_i[r], out_d[r])
