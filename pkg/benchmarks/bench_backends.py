"""Compare the jitted kernels against the pure-numpy fallback.

Run:  python benchmarks/bench_backends.py [--quick]

Covers the hot paths: ball-tree build, batched kNN queries, Lloyd
sweeps, and an end-to-end prompter fit. The first numba call of each
kernel includes JIT compilation; a warmup pass is timed out of band.
"""

import argparse
import time

import numpy as np

from mixturepfn import _backend, micp
from mixturepfn.clustering import kmeans
from mixturepfn.data import TabularDataset
from mixturepfn.neighbors import build_index


def clusterable(n, d, seed=0, n_blobs=24):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-10, 10, size=(n_blobs, d))
    return (centers[rng.integers(0, n_blobs, size=n)]
            + rng.normal(0, 0.8, size=(n, d)))


def wrap(X):
    return TabularDataset(features=X,
                          labels=np.zeros(X.shape[0], dtype=np.int64),
                          n_classes=1,
                          feature_kinds=["numeric"] * X.shape[1],
                          column_names=[f"f{j}" for j in range(X.shape[1])],
                          preprocessed=True)


def timed(fn, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run(quick: bool):
    n = 20_000 if quick else 200_000
    n_fit = 10_000 if quick else 50_000
    d = 6
    pts = clusterable(n, d)
    queries = clusterable(2000, d, seed=1)
    fit_ds = wrap(clusterable(n_fit, d, seed=2))

    cases = {
        "balltree build": lambda: build_index(pts),
        "knn batch (k=10, 2000 q)":
            lambda idx=None: build_index(pts).knn_batch(queries, 10),
        "kmeans (K=32, 20 iters)":
            lambda: kmeans(pts, 32, max_iters=20, seed=0),
        f"micp fit (N={n_fit}, B=1000)":
            lambda: micp.fit(fit_ds, gamma=1.0, B=1000, seed=0,
                             max_iters=10),
    }

    results = {}
    for backend in ("numba", "numpy"):
        try:
            _backend.set_backend(backend)
        except ImportError:
            print(f"{backend}: unavailable, skipping")
            continue
        # warmup triggers JIT compilation for the numba flavour
        build_index(pts[:256]).knn_batch(queries[:4], 3)
        kmeans(pts[:256], 4, max_iters=2, seed=0)
        for name, fn in cases.items():
            results[(backend, name)] = timed(fn, repeats=2 if quick else 3)
            print(f"{backend:6s} {name:28s} "
                  f"{results[(backend, name)]:8.3f}s")

    print()
    print(f"{'kernel':28s} {'numba':>9s} {'numpy':>9s} {'speedup':>8s}")
    for name in cases:
        nb = results.get(("numba", name))
        npv = results.get(("numpy", name))
        if nb and npv:
            print(f"{name:28s} {nb:8.3f}s {npv:8.3f}s {npv / nb:7.1f}x")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true",
                    help="smaller sizes for a fast sanity run")
    args = ap.parse_args()
    run(args.quick)
