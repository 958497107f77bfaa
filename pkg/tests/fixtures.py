"""Synthetic dataset builders shared by the unit and acceptance suites."""

import numpy as np

from mixturepfn.data import TabularDataset


def wrap(X, y, n_classes):
    X = np.asarray(X, dtype=np.float64)
    X = (X - X.mean(axis=0)) / np.where(X.std(axis=0) > 0, X.std(axis=0), 1)
    return TabularDataset(features=X, labels=np.asarray(y, dtype=np.int64),
                          n_classes=n_classes,
                          feature_kinds=["numeric"] * X.shape[1],
                          column_names=[f"f{j}" for j in range(X.shape[1])],
                          preprocessed=True)


def two_blob(rng, n=300, d=2, mu=3.0, noise=0.1):
    """Well-separated class blobs with a fraction of flipped labels."""
    half = n // 2
    X = np.vstack([rng.normal(-mu, 1.0, size=(half, d)),
                   rng.normal(+mu, 1.0, size=(n - half, d))])
    y = np.array([0] * half + [1] * (n - half))
    flip = rng.random(n) < noise
    y = np.where(flip, 1 - y, y)
    return wrap(X, y, 2)


def two_blob_clean(rng, n=400, d=2, mu=3.0):
    return two_blob(rng, n=n, d=d, mu=mu, noise=0.0)


def quarter_circle(rng, n=300, noise=0.1):
    """Two quarter-circle arcs at different radii, labels by arc, with a
    fraction of flipped labels."""
    theta = rng.uniform(0, np.pi / 2, size=n)
    inner = rng.random(n) < 0.5
    r = np.where(inner, 1.0, 2.2) + rng.normal(0, 0.08, size=n)
    y = (~inner).astype(int)
    flip = rng.random(n) < noise
    y = np.where(flip, 1 - y, y)
    X = np.c_[r * np.cos(theta), r * np.sin(theta)]
    return wrap(X, y, 2)


def stratified_blobs(rng, n=20000, d=4, n_blobs=8, noise=0.05, cell=0.8,
                     blob_sigma=1.0, blob_spread=12.0):
    """Blobs carrying fine checkerboard label structure.

    The label is a two-dimensional parity of sub-blob cells plus flip
    noise, so resolving it needs dense local context: a random global
    subsample of the same size loses the cells while nearest-neighbor
    contexts keep them.
    """
    centers = rng.uniform(-blob_spread, blob_spread, size=(n_blobs, d))
    which = rng.integers(0, n_blobs, size=n)
    local = rng.normal(0, blob_sigma, size=(n, d))
    X = centers[which] + local
    parity = (np.floor(local[:, 0] / cell) + np.floor(local[:, 1] / cell))
    y = (parity % 2).astype(int)
    flip = rng.random(n) < noise
    y = np.where(flip, 1 - y, y)
    return wrap(X, y, 2)
