"""Exact nearest-neighbor search over a ball tree.

Backs three callers: per-query support sets, the center router, and
prompter expansion. Queries are exact (set-identical to an exhaustive
scan; distance ties go to the lower row index) and instrumented with a
distance-evaluation counter so the sublinear-routing claims can be
measured rather than assumed.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .errors import KTooLarge, NonFiniteInput

DEFAULT_LEAF_SIZE = 32


class NeighborIndex:
    """Immutable ball tree over an M x d point matrix.

    The tree is flat: per-node [start, end) ranges into a permutation
    array, children at 2i+1 / 2i+2, leaves on the last level. Queries
    never mutate the points; `distance_count` accumulates the number of
    point and centroid distance evaluations performed so far (approximate
    if queried from several threads at once).
    """

    def __init__(self, points: np.ndarray, leaf_size: int = DEFAULT_LEAF_SIZE):
        points = np.ascontiguousarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[0] < 1 or points.shape[1] < 1:
            raise ValueError("points must be a non-empty 2-D matrix")
        bad = ~np.isfinite(points)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise NonFiniteInput(int(r), int(c))
        if leaf_size < 1:
            raise ValueError("leaf_size must be >= 1")

        self.points = points
        self.leaf_size = leaf_size
        M = points.shape[0]
        n_levels = 1 + max(0, int(math.floor(math.log2(max(1.0, (M - 1) / leaf_size)))))
        n_nodes = 2 ** n_levels - 1
        self._idx = np.arange(M, dtype=np.int64)
        self._node_start = np.zeros(n_nodes, dtype=np.int64)
        self._node_end = np.zeros(n_nodes, dtype=np.int64)
        self._node_is_leaf = np.zeros(n_nodes, dtype=np.uint8)
        self._node_radius = np.zeros(n_nodes, dtype=np.float64)
        self._node_centroid = np.zeros((n_nodes, points.shape[1]),
                                       dtype=np.float64)
        kernels.balltree_build(points, self._idx, self._node_start,
                               self._node_end, self._node_is_leaf,
                               self._node_radius, self._node_centroid)
        self.distance_count = 0

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def _tree_args(self):
        return (self.points, self._idx, self._node_start, self._node_end,
                self._node_is_leaf, self._node_radius, self._node_centroid)

    def knn(self, query: np.ndarray, k: int) -> list[tuple[int, float]]:
        """k nearest stored points, ascending by (distance, row index)."""
        q = np.ascontiguousarray(query, dtype=np.float64)
        if q.shape != (self.dim,):
            raise ValueError(f"query must have shape ({self.dim},)")
        M = len(self)
        if not 1 <= k <= M:
            raise KTooLarge(k, M)
        out_i = np.empty(k, dtype=np.int64)
        out_d = np.empty(k, dtype=np.float64)
        self.distance_count += kernels.balltree_knn(*self._tree_args(), q, k,
                                                    out_i, out_d)
        return [(int(i), float(d)) for i, d in zip(out_i, out_d)]

    def knn_batch(self, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Batched knn: returns (indices, distances), each n_queries x k."""
        Q = np.ascontiguousarray(queries, dtype=np.float64)
        if Q.ndim != 2 or Q.shape[1] != self.dim:
            raise ValueError(f"queries must be 2-D with {self.dim} columns")
        M = len(self)
        if not 1 <= k <= M:
            raise KTooLarge(k, M)
        out_i = np.empty((Q.shape[0], k), dtype=np.int64)
        out_d = np.empty((Q.shape[0], k), dtype=np.float64)
        counts = np.empty(Q.shape[0], dtype=np.int64)
        kernels.balltree_knn_batch(*self._tree_args(), Q, k, out_i, out_d,
                                   counts)
        self.distance_count += int(counts.sum())
        return out_i, out_d

    def nns(self, query: np.ndarray) -> int:
        """Index of the single nearest stored point (ties: lower index)."""
        return self.knn(query, 1)[0][0]

    def nns_batch(self, queries: np.ndarray) -> np.ndarray:
        return self.knn_batch(queries, 1)[0][:, 0]


def build_index(points: np.ndarray, leaf_size: int = DEFAULT_LEAF_SIZE) -> NeighborIndex:
    return NeighborIndex(points, leaf_size=leaf_size)


def brute_force_knn(points: np.ndarray, query: np.ndarray, k: int) -> list[tuple[int, float]]:
    """Exhaustive-scan reference: used by tests and audit tooling."""
    d2 = ((points - query) ** 2).sum(axis=1)
    order = np.lexsort((np.arange(points.shape[0]), d2))[:k]
    return [(int(i), float(math.sqrt(d2[i]))) for i in order]
