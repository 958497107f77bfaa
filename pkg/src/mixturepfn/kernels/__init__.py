"""Backend dispatch for the hot kernels.

Callers use the functions exported here; the numba or numpy twin is
resolved per call from the active backend (see mixturepfn._backend), so
tests and benchmarks can flip backends at runtime.
"""

from __future__ import annotations

from .._backend import active_backend

_modules: dict[str, dict] = {}


def _mod(kind: str):
    backend = active_backend()
    cache = _modules.setdefault(kind, {})
    if backend not in cache:
        if kind == "balltree":
            if backend == "numba":
                from . import _balltree_nb as m
            else:
                from . import _balltree_np as m
        elif kind == "kmeans":
            if backend == "numba":
                from . import _kmeans_nb as m
            else:
                from . import _kmeans_np as m
        else:
            raise KeyError(kind)
        cache[backend] = m
    return cache[backend]


def balltree_build(points, idx, node_start, node_end, node_is_leaf,
                   node_radius, node_centroid):
    _mod("balltree").build(points, idx, node_start, node_end, node_is_leaf,
                           node_radius, node_centroid)


def balltree_knn(points, idx, node_start, node_end, node_is_leaf,
                 node_radius, node_centroid, q, k, out_i, out_d):
    return _mod("balltree").knn_query(points, idx, node_start, node_end,
                                      node_is_leaf, node_radius,
                                      node_centroid, q, k, out_i, out_d)


def balltree_knn_batch(points, idx, node_start, node_end, node_is_leaf,
                       node_radius, node_centroid, queries, k, out_i, out_d,
                       out_counts):
    _mod("balltree").knn_query_batch(points, idx, node_start, node_end,
                                     node_is_leaf, node_radius, node_centroid,
                                     queries, k, out_i, out_d, out_counts)


def kmeans_assign(points, centers, labels_out):
    return _mod("kmeans").assign(points, centers, labels_out)


def kmeans_update(points, labels, centers_out, counts_out):
    _mod("kmeans").update(points, labels, centers_out, counts_out)
