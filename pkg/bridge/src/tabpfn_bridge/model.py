"""Model backends for the bridge.

`load_model("tabpfn")` wraps the pretrained TabPFN classifier (the
package must be installed and its checkpoint available locally; nothing
is downloaded here). `load_model("stub")` is a deterministic synthetic
predictor for protocol testing and CI machines without the model.
"""

from __future__ import annotations

import numpy as np


class ModelUnavailable(RuntimeError):
    pass


class StubModel:
    """Deterministic nearest-centroid softmax; no external weights.

    Exists so the protocol, chunking, and fuzz behavior can be exercised
    end to end where the real model is not installed.
    """

    name = "stub"

    def predict_proba(self, ctx_x, ctx_y, qry_x, n_classes, n_ensemble,
                      seed):
        ctx_x = np.asarray(ctx_x, dtype=np.float64)
        ctx_y = np.asarray(ctx_y, dtype=np.int64)
        qry_x = np.asarray(qry_x, dtype=np.float64)
        centroids = np.zeros((n_classes, ctx_x.shape[1]))
        for c in range(n_classes):
            rows = ctx_x[ctx_y == c]
            if rows.shape[0]:
                centroids[c] = rows.mean(axis=0)
            else:
                centroids[c] = ctx_x.mean(axis=0) + 1e3  # absent class
        d2 = ((qry_x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        scores = -d2
        scores -= scores.max(axis=1, keepdims=True)
        e = np.exp(scores)
        return e / e.sum(axis=1, keepdims=True)


class TabPFNModel:
    """Thin adapter around the pretrained TabPFN classifier."""

    name = "tabpfn"

    def __init__(self, device: str = "cpu"):
        try:
            from tabpfn import TabPFNClassifier
        except ImportError as e:
            raise ModelUnavailable(
                "the 'tabpfn' package is not installed; install it with "
                "'pip install tabpfn' and make sure its pretrained "
                "checkpoint is available locally") from e
        self._cls = TabPFNClassifier
        self._device = device

    def predict_proba(self, ctx_x, ctx_y, qry_x, n_classes, n_ensemble,
                      seed):
        import torch

        torch.manual_seed(seed)
        clf = self._cls(device=self._device,
                        N_ensemble_configurations=max(1, n_ensemble))
        ctx_x = np.asarray(ctx_x, dtype=np.float64)
        ctx_y = np.asarray(ctx_y, dtype=np.int64)
        clf.fit(ctx_x, ctx_y)
        raw = np.asarray(clf.predict_proba(np.asarray(qry_x,
                                                      dtype=np.float64)))
        # scatter the fitted-class columns into the full class range
        out = np.zeros((raw.shape[0], n_classes))
        for col, cls in enumerate(np.asarray(clf.classes_, dtype=np.int64)):
            out[:, cls] = raw[:, col]
        sums = out.sum(axis=1)
        sums[sums <= 0] = 1.0
        return out / sums[:, None]


def load_model(name: str):
    if name == "stub":
        return StubModel()
    if name == "tabpfn":
        return TabPFNModel()
    raise ValueError(f"unknown model backend {name!r}")
