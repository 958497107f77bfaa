"""Jitted Lloyd-sweep kernels: nearest-center assignment and the center
reduction. Tie on distance goes to the lower center index; accumulation
order is fixed (row order) so repeated runs are bit-identical."""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def assign(points, centers, labels_out):
    N, d = points.shape
    K = centers.shape[0]
    inertia = 0.0
    for i in range(N):
        best = np.inf
        bk = 0
        for kk in range(K):
            acc = 0.0
            for j in range(d):
                diff = points[i, j] - centers[kk, j]
                acc += diff * diff
            if acc < best:
                best = acc
                bk = kk
        labels_out[i] = bk
        inertia += best
    return inertia


@njit(cache=True)
def update(points, labels, centers_out, counts_out):
    N, d = points.shape
    K = centers_out.shape[0]
    for kk in range(K):
        counts_out[kk] = 0
        for j in range(d):
            centers_out[kk, j] = 0.0
    for i in range(N):
        kk = labels[i]
        counts_out[kk] += 1
        for j in range(d):
            centers_out[kk, j] += points[i, j]
    for kk in range(K):
        if counts_out[kk] > 0:
            for j in range(d):
                centers_out[kk, j] /= counts_out[kk]
