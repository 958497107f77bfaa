"""Lloyd k-means for prompter initialization, plus a size-capped variant
for the regime where the nonzero-overlap guarantee is provable.

Both start from k-means++ seeds and are deterministic given the seed.
Empty clusters are repaired by stealing the point farthest from its
current center (never from a singleton cluster). The capped variant
replaces the assignment step with a regret-greedy pass: rows ordered by
how much they prefer their best center over their runner-up, each taking
the nearest center that still has room.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import Infeasible, KTooLarge


@dataclass
class Clustering:
    centers: np.ndarray          # K x d
    assignments: np.ndarray      # length-N cluster ids
    inertia: float
    iterations_run: int

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.k)


def _plusplus_seeds(points: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++: first seed uniform, then D^2-weighted draws."""
    N = points.shape[0]
    centers = np.empty((K, points.shape[1]))
    first = int(rng.integers(N))
    centers[0] = points[first]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for kk in range(1, K):
        total = d2.sum()
        if total <= 0:
            # all remaining mass at distance zero: spread over unused rows
            pick = int(rng.integers(N))
        else:
            pick = int(rng.choice(N, p=d2 / total))
        centers[kk] = points[pick]
        d2 = np.minimum(d2, ((points - centers[kk]) ** 2).sum(axis=1))
    return centers


def _repair_empty(points, centers, labels, counts):
    """Give each empty cluster the point farthest from its own center."""
    d2_own = ((points - centers[labels]) ** 2).sum(axis=1)
    for kk in np.flatnonzero(counts == 0):
        eligible = counts[labels] > 1
        if not eligible.any():
            break
        cand = np.where(eligible, d2_own, -np.inf)
        steal = int(np.argmax(cand))
        counts[labels[steal]] -= 1
        labels[steal] = kk
        counts[kk] = 1
        centers[kk] = points[steal]
        d2_own[steal] = 0.0


def kmeans(points: np.ndarray, K: int, max_iters: int = 100,
           seed: int = 0) -> Clustering:
    """Lloyd iterations to an assignment fixpoint or the iteration cap.

    Inertia is checked to be non-increasing on every iteration; a
    violation indicates a kernel bug and raises immediately.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    N = points.shape[0]
    if not 1 <= K <= N:
        raise KTooLarge(K, N)
    rng = np.random.default_rng(seed)
    centers = _plusplus_seeds(points, K, rng)
    labels = np.empty(N, dtype=np.int64)
    counts = np.empty(K, dtype=np.int64)
    prev_labels = None
    prev_inertia = np.inf
    iters = 0
    inertia = kernels.kmeans_assign(points, centers, labels)
    while iters < max_iters:
        iters += 1
        kernels.kmeans_update(points, labels, centers, counts)
        if (counts == 0).any():
            _repair_empty(points, centers, labels, counts)
            kernels.kmeans_update(points, labels, centers, counts)
        inertia = kernels.kmeans_assign(points, centers, labels)
        if inertia > prev_inertia * (1 + 1e-9) + 1e-12:
            raise AssertionError(
                f"inertia increased: {prev_inertia} -> {inertia}")
        prev_inertia = inertia
        if prev_labels is not None and np.array_equal(labels, prev_labels):
            break
        prev_labels = labels.copy()
    # duplicate-heavy data can re-empty a cluster on the final assignment
    counts = np.bincount(labels, minlength=K).astype(np.int64)
    if (counts == 0).any():
        kernels.kmeans_update(points, labels, centers, counts)
        _repair_empty(points, centers, labels, counts)
        inertia = float(((points - centers[labels]) ** 2).sum())
    return Clustering(centers=centers, assignments=labels,
                      inertia=float(inertia), iterations_run=iters)


def _capped_assign(points, centers, cap):
    """Regret-greedy capacity assignment.

    Rows go in ascending order of (distance to best center - distance to
    second-best); each takes its nearest center with spare capacity.
    """
    N = points.shape[0]
    K = centers.shape[0]
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    if K == 1:
        order_rows = np.arange(N)
        prefs = np.zeros((N, 1), dtype=np.int64)
    else:
        part = np.partition(d2, 1, axis=1)
        regret = part[:, 0] - part[:, 1]
        order_rows = np.argsort(regret, kind="stable")
        prefs = np.argsort(d2, axis=1, kind="stable")
    labels = np.empty(N, dtype=np.int64)
    room = np.full(K, cap, dtype=np.int64)
    inertia = 0.0
    for r in order_rows:
        for kk in prefs[r]:
            if room[kk] > 0:
                labels[r] = kk
                room[kk] -= 1
                inertia += d2[r, kk]
                break
    return labels, inertia


def constrained_kmeans(points: np.ndarray, K: int, max_size: int,
                       max_iters: int = 100, seed: int = 0) -> Clustering:
    """K-means with every cluster holding at most `max_size` rows."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    N = points.shape[0]
    if not 1 <= K <= N:
        raise KTooLarge(K, N)
    if K * max_size < N:
        raise Infeasible(
            f"K*max_size = {K * max_size} cannot hold {N} rows")
    rng = np.random.default_rng(seed)
    centers = _plusplus_seeds(points, K, rng)
    counts = np.empty(K, dtype=np.int64)
    prev_labels = None
    iters = 0
    labels, inertia = _capped_assign(points, centers, max_size)
    while iters < max_iters:
        iters += 1
        kernels.kmeans_update(points, labels, centers, counts)
        if (counts == 0).any():
            _repair_empty(points, centers, labels, counts)
            kernels.kmeans_update(points, labels, centers, counts)
        labels, inertia = _capped_assign(points, centers, max_size)
        if prev_labels is not None and np.array_equal(labels, prev_labels):
            break
        prev_labels = labels.copy()
    # greedy assignment can leave a center unused; hand it one stealable row
    counts = np.bincount(labels, minlength=K).astype(np.int64)
    if (counts == 0).any():
        kernels.kmeans_update(points, labels, centers, counts)
        _repair_empty(points, centers, labels, counts)
        d2_own = ((points - centers[labels]) ** 2).sum(axis=1)
        inertia = float(d2_own.sum())
    return Clustering(centers=centers, assignments=labels,
                      inertia=float(inertia), iterations_run=iters)
