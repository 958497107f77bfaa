"""Pure-numpy Lloyd-sweep kernels. Row chunking keeps the N x K x d
broadcast below ~64 MB; per-dimension bincount gives a deterministic
center reduction."""

from __future__ import annotations

import numpy as np

_CHUNK_BUDGET = 8_000_000  # floats per broadcast chunk


def assign(points, centers, labels_out):
    N, d = points.shape
    K = centers.shape[0]
    chunk = max(1, _CHUNK_BUDGET // max(1, K * d))
    inertia = 0.0
    for s in range(0, N, chunk):
        e = min(N, s + chunk)
        d2 = ((points[s:e, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        lab = d2.argmin(axis=1)
        labels_out[s:e] = lab
        inertia += d2[np.arange(e - s), lab].sum()
    return inertia


def update(points, labels, centers_out, counts_out):
    K, d = centers_out.shape
    counts = np.bincount(labels, minlength=K)
    counts_out[:] = counts
    for j in range(d):
        centers_out[:, j] = np.bincount(labels, weights=points[:, j],
                                        minlength=K)
    nonempty = counts > 0
    centers_out[nonempty] /= counts[nonempty, None]
    centers_out[~nonempty] = 0.0
