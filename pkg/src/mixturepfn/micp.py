"""Sparse mixture of in-context prompters.

A fitted model is a set of K precomputed context sets ("prompters"), one
per k-means cluster of the training data, plus a nearest-center router.
Small clusters expand their context to the B nearest training rows around
the cluster center; large clusters subsample down to B. Incoming test
rows are routed to one prompter and served in batched prompts whose
context never exceeds B rows, whatever the training-set size.

Also ships the two KNN-prompting ablation variants: v1 packs a batch of
queries with the union of each query's B/N_batch nearest neighbors, v2
gives every query its own B-NN prompt (and is meant to run unensembled).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .clustering import constrained_kmeans, kmeans
from .data import TabularDataset
from .errors import DimensionMismatch
from .neighbors import NeighborIndex

PLAIN_KMEANS = "plain_kmeans"
CONSTRAINED_KMEANS = "constrained_kmeans"

_MAGIC = b"MICP1"


@dataclass
class Prompt:
    """One predictor input: a bounded context plus a batch of queries."""

    context_features: np.ndarray   # B' x d
    context_labels: np.ndarray     # length B'
    query_features: np.ndarray     # N_q x d
    n_classes: int
    prompter_id: int | None = None
    query_indices: np.ndarray | None = None  # original test positions

    @property
    def context_size(self) -> int:
        return self.context_features.shape[0]

    @property
    def n_queries(self) -> int:
        return self.query_features.shape[0]


@dataclass
class MicpModel:
    centers: np.ndarray                 # K x d router targets
    center_index: NeighborIndex
    train_index: NeighborIndex
    prompt_supports: list[np.ndarray]   # K index lists into the train set
    support_features: list[np.ndarray]
    support_labels: list[np.ndarray]
    B: int
    gamma: float
    mode: str
    seed: int
    n_classes: int
    cluster_sizes: np.ndarray
    train_assignments: np.ndarray | None = None
    self_routing: bool = False
    fit_report: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]


def num_prompters(gamma: float, n_train: int, B: int) -> int:
    """Prompter count K = ceil(gamma * n_train / B), at least 1, at most
    n_train."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if B < 1:
        raise ValueError("B must be >= 1")
    return min(n_train, max(1, math.ceil(gamma * n_train / B)))


def fit(train: TabularDataset, gamma: float = 1.0, B: int = 3000,
        mode: str = PLAIN_KMEANS, seed: int = 0, self_routing: bool = False,
        max_iters: int = 100) -> MicpModel:
    """Cluster the training set and precompute each prompter's context.

    With n_train <= B there is nothing to split: a single prompter holds
    the whole training set, matching plain bounded-context behavior.
    """
    X = np.ascontiguousarray(train.features, dtype=np.float64)
    y = np.asarray(train.labels, dtype=np.int64)
    n = X.shape[0]
    if n < 1:
        raise ValueError("empty training set")
    if mode not in (PLAIN_KMEANS, CONSTRAINED_KMEANS):
        raise ValueError(f"unknown mode {mode!r}")

    train_index = NeighborIndex(X)
    rng = np.random.default_rng(seed)

    if n <= B:
        centers = X.mean(axis=0, keepdims=True)
        supports = [np.arange(n, dtype=np.int64)]
        assignments = np.zeros(n, dtype=np.int64)
        cluster_sizes = np.array([n], dtype=np.int64)
    else:
        K = num_prompters(gamma, n, B)
        if mode == CONSTRAINED_KMEANS:
            clustering = constrained_kmeans(X, K, max_size=B,
                                            max_iters=max_iters, seed=seed)
        else:
            clustering = kmeans(X, K, max_iters=max_iters, seed=seed)
        centers = clustering.centers
        assignments = clustering.assignments
        cluster_sizes = clustering.sizes()
        supports = []
        for k in range(K):
            members = np.flatnonzero(assignments == k)
            if members.size < B:
                # expand: B nearest training rows around the center
                ids, _ = train_index.knn_batch(centers[k:k + 1], B)
                ids = ids[0].astype(np.int64)
                if mode == CONSTRAINED_KMEANS:
                    # capacity assignment can displace a member beyond the
                    # B-th neighbor of its center; keep the cluster inside
                    # the context so the nonzero-overlap guarantee is
                    # literal, topping up with the nearest non-members
                    member_set = set(members.tolist())
                    fill = [i for i in ids if int(i) not in member_set]
                    ids = np.concatenate([
                        members,
                        np.array(fill[:B - members.size], dtype=np.int64),
                    ])
                supports.append(ids)
            else:
                # shrink: seeded subsample without replacement
                pick = rng.choice(members, size=B, replace=False)
                supports.append(np.sort(pick).astype(np.int64))

    center_index = NeighborIndex(centers)
    support_features = [X[s] for s in supports]
    support_labels = [y[s] for s in supports]
    return MicpModel(centers=centers, center_index=center_index,
                     train_index=train_index, prompt_supports=supports,
                     support_features=support_features,
                     support_labels=support_labels, B=B, gamma=gamma,
                     mode=mode, seed=seed, n_classes=train.n_classes,
                     cluster_sizes=cluster_sizes,
                     train_assignments=assignments,
                     self_routing=self_routing)


def route(model: MicpModel, x: np.ndarray) -> int:
    """Prompter id for one query: nearest router center."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.dim,):
        raise DimensionMismatch(
            f"query has shape {x.shape}, model dimension is {model.dim}")
    if model.k == 1:
        return 0
    return model.center_index.nns(x)


def route_batch(model: MicpModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.dim:
        raise DimensionMismatch(
            f"queries have shape {X.shape}, model dimension is {model.dim}")
    if model.k == 1:
        return np.zeros(X.shape[0], dtype=np.int64)
    return model.center_index.nns_batch(X)


def support_set(model: MicpModel, x: np.ndarray, B: int | None = None) -> np.ndarray:
    """Exact B-NN of `x` over the training rows (the ideal context)."""
    b = model.B if B is None else B
    b = min(b, len(model.train_index))
    ids, _ = model.train_index.knn_batch(
        np.asarray(x, dtype=np.float64)[None, :], b)
    return ids[0]


def overlap(model: MicpModel, x: np.ndarray, B: int | None = None,
            train_row: int | None = None) -> int:
    """Size of the intersection between the routed prompter's context and
    the exact B-NN support set of x.

    `train_row` switches to the self-routing rule (train rows go to their
    assigned cluster) used by the guarantee audit; it requires a model
    fitted with assignments available.
    """
    if train_row is not None and model.self_routing:
        if model.train_assignments is None:
            raise ValueError("model carries no training assignments")
        k = int(model.train_assignments[train_row])
    else:
        k = route(model, x)
    supp = support_set(model, x, B)
    return int(np.intersect1d(model.prompt_supports[k], supp,
                              assume_unique=False).size)


def overlap_stats(model: MicpModel, X: np.ndarray,
                  rows_are_train: bool = False) -> dict:
    """Fraction of rows with nonzero overlap plus the mean overlap."""
    overlaps = []
    for i in range(X.shape[0]):
        overlaps.append(overlap(model, X[i],
                                train_row=i if rows_are_train else None))
    arr = np.array(overlaps)
    return {
        "n": int(arr.size),
        "nonzero_fraction": float((arr >= 1).mean()),
        "mean_overlap": float(arr.mean()),
        "min_overlap": int(arr.min()),
    }


def overlap_counts_train(model: MicpModel, B: int | None = None,
                         rows: np.ndarray | None = None) -> np.ndarray:
    """Overlap of every training row (or a row subset) in one sweep.

    Equivalent to calling `overlap` per row with train_row set when the
    model self-routes; batched for audit-scale datasets (the K x N
    membership table stays in memory).
    """
    X = model.train_index.points
    n = X.shape[0]
    rows = np.arange(n) if rows is None else np.asarray(rows)
    b = min(model.B if B is None else B, n)
    supp_ids, _ = model.train_index.knn_batch(X[rows], b)
    if model.self_routing and model.train_assignments is not None:
        ks = model.train_assignments[rows]
    else:
        ks = route_batch(model, X[rows])
    member = np.zeros((model.k, n), dtype=bool)
    for k in range(model.k):
        member[k, model.prompt_supports[k]] = True
    return member[ks[:, None], supp_ids].sum(axis=1)


def assemble_batches(model: MicpModel, X_test: np.ndarray,
                     n_batch: int = 1024) -> list[Prompt]:
    """Group test rows by routed prompter and chunk them into prompts.

    Deterministic order: prompter ids ascending, input order within a
    prompter. Every test row appears in exactly one prompt; its original
    position rides along in `query_indices` so predictions can be
    scattered back. Context arrays are shared with the model, so prompt
    assembly allocates only the query rows.
    """
    X_test = np.asarray(X_test, dtype=np.float64)
    ids = route_batch(model, X_test)
    order = np.argsort(ids, kind="stable")
    run_starts = np.flatnonzero(np.diff(ids[order])) + 1
    prompts = []
    for rows in np.split(order, run_starts):
        k = int(ids[rows[0]])
        for s in range(0, rows.size, n_batch):
            chunk = rows[s:s + n_batch]
            prompts.append(Prompt(
                context_features=model.support_features[k],
                context_labels=model.support_labels[k],
                query_features=X_test[chunk],
                n_classes=model.n_classes,
                prompter_id=k,
                query_indices=chunk,
            ))
    return prompts


def knn_prompt_v1(train_index: NeighborIndex, labels: np.ndarray,
                  X_batch: np.ndarray, B: int, n_batch: int,
                  n_classes: int) -> Prompt:
    """Batched KNN prompt: the context is the deduplicated union of each
    query's floor(B / n_batch) nearest neighbors, bounded by B."""
    X_batch = np.asarray(X_batch, dtype=np.float64)
    if X_batch.shape[0] != n_batch:
        raise ValueError(f"expected {n_batch} queries, got {X_batch.shape[0]}")
    per_query = B // n_batch
    if per_query < 1:
        raise ValueError(f"B={B} gives no neighbors per query at "
                         f"n_batch={n_batch}")
    per_query = min(per_query, len(train_index))
    ids, _ = train_index.knn_batch(X_batch, per_query)
    seen: dict[int, None] = {}
    for row in ids:
        for i in row:
            if int(i) not in seen:
                seen[int(i)] = None
    ctx = np.fromiter(seen.keys(), dtype=np.int64)
    return Prompt(context_features=train_index.points[ctx],
                  context_labels=np.asarray(labels)[ctx],
                  query_features=X_batch, n_classes=n_classes,
                  prompter_id=None)


def knn_prompt_v2(train_index: NeighborIndex, labels: np.ndarray,
                  x: np.ndarray, B: int, n_classes: int) -> Prompt:
    """Per-query KNN prompt: exact B-NN context for a single query.
    Downstream prediction is meant to run with n_ensemble = 1."""
    x = np.asarray(x, dtype=np.float64)
    b = min(B, len(train_index))
    ids, _ = train_index.knn_batch(x[None, :], b)
    ctx = ids[0]
    return Prompt(context_features=train_index.points[ctx],
                  context_labels=np.asarray(labels)[ctx],
                  query_features=x[None, :], n_classes=n_classes,
                  prompter_id=None)


def save_model(model: MicpModel, path: str) -> None:
    """Binary model file: magic, little-endian K/B/d, centers, support
    index lists; gamma/mode/seed go to a JSON sidecar."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<qqq", model.k, model.B, model.dim))
        fh.write(np.ascontiguousarray(model.centers,
                                      dtype="<f8").tobytes())
        for s in model.prompt_supports:
            fh.write(struct.pack("<q", s.size))
            fh.write(np.ascontiguousarray(s, dtype="<i8").tobytes())
    sidecar = {"gamma": model.gamma, "mode": model.mode, "seed": model.seed}
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True)
        fh.write("\n")


def load_model(path: str, train: TabularDataset) -> MicpModel:
    """Rebuild a model from its file plus the training dataset it was
    fitted on (the file stores indices, not feature rows)."""
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != _MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        K, B, d = struct.unpack("<qqq", fh.read(24))
        centers = np.frombuffer(fh.read(K * d * 8),
                                dtype="<f8").reshape(K, d).copy()
        supports = []
        for _ in range(K):
            (size,) = struct.unpack("<q", fh.read(8))
            supports.append(np.frombuffer(fh.read(size * 8),
                                          dtype="<i8").copy())
    with open(path + ".json", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    X = np.ascontiguousarray(train.features, dtype=np.float64)
    if X.shape[1] != d:
        raise DimensionMismatch(
            f"model expects d={d}, dataset has d={X.shape[1]}")
    y = np.asarray(train.labels, dtype=np.int64)
    return MicpModel(centers=centers, center_index=NeighborIndex(centers),
                     train_index=NeighborIndex(X), prompt_supports=supports,
                     support_features=[X[s] for s in supports],
                     support_labels=[y[s] for s in supports], B=B,
                     gamma=sidecar["gamma"], mode=sidecar["mode"],
                     seed=sidecar["seed"], n_classes=train.n_classes,
                     cluster_sizes=np.array([s.size for s in supports]),
                     train_assignments=None)
