"""NDJSON predictor server.

One JSON object per line on stdin, one per line on stdout. Ops:

  {"op": "hello"}
      -> {"op": "hello", "max_context": 3000, "max_features": 100,
          "max_classes": 10, "supports_ensembling": true}
  {"op": "predict", "ctx_x": [[...]], "ctx_y": [...], "qry_x": [[...]],
   "n_classes": C, "n_ensemble": E, "seed": S}
      -> {"op": "probs", "rows": [[...]]}
  {"op": "shutdown"}
      -> (process exits)

Anything malformed or out of capability gets {"op": "error", "msg": ...}
and the session keeps serving; only shutdown or a closed input stream
ends the loop. Queries are split into chunks of at most 1024 rows before
hitting the wrapped model, and output rows are renormalized to sum to 1
before transport.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

MAX_CONTEXT = 3000
MAX_FEATURES = 100
MAX_CLASSES = 10
QUERY_CHUNK = 1024
ROW_SUM_TOL = 1e-6


@dataclass
class BridgeSession:
    """One serving session: a loaded model plus request accounting."""

    model: object
    max_context: int = MAX_CONTEXT
    max_features: int = MAX_FEATURES
    max_classes: int = MAX_CLASSES
    query_chunk: int = QUERY_CHUNK
    requests_handled: int = 0
    chunks_run: int = 0
    stats: dict = field(default_factory=dict)

    def hello(self) -> dict:
        return {
            "op": "hello",
            "max_context": self.max_context,
            "max_features": self.max_features,
            "max_classes": self.max_classes,
            "supports_ensembling": True,
        }

    def handle_line(self, line: str) -> dict | None:
        """Reply for one request line; None means shut down."""
        line = line.strip()
        if not line:
            return {"op": "error", "msg": "empty line"}
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as e:
            return {"op": "error", "msg": f"not valid JSON: {e}"}
        if not isinstance(msg, dict):
            return {"op": "error", "msg": "message must be a JSON object"}
        op = msg.get("op")
        if op == "hello":
            return self.hello()
        if op == "shutdown":
            return None
        if op == "predict":
            try:
                return self.predict(msg)
            except Exception as e:  # a model fault must not kill the loop
                return {"op": "error", "msg": f"prediction failed: {e}"}
        return {"op": "error", "msg": f"unknown op {op!r}"}

    def _validated_arrays(self, msg: dict):
        try:
            ctx_x = np.asarray(msg["ctx_x"], dtype=np.float64)
            ctx_y = np.asarray(msg["ctx_y"], dtype=np.int64)
            qry_x = np.asarray(msg["qry_x"], dtype=np.float64)
            n_classes = int(msg["n_classes"])
        except (KeyError, TypeError, ValueError) as e:
            raise ValueError(f"bad predict fields: {e}") from e
        if ctx_x.ndim != 2 or qry_x.ndim != 2:
            raise ValueError("ctx_x and qry_x must be 2-D arrays")
        if ctx_x.shape[0] != ctx_y.shape[0]:
            raise ValueError("ctx_x and ctx_y length mismatch")
        if ctx_x.shape[0] == 0:
            raise ValueError("empty context")
        if ctx_x.shape[1] != qry_x.shape[1]:
            raise ValueError("context/query feature dimension mismatch")
        if not (np.isfinite(ctx_x).all() and np.isfinite(qry_x).all()):
            raise ValueError("non-finite feature values")
        if ctx_x.shape[0] > self.max_context:
            raise ValueError(
                f"context of {ctx_x.shape[0]} rows exceeds "
                f"max_context={self.max_context}")
        if ctx_x.shape[1] > self.max_features:
            raise ValueError(
                f"{ctx_x.shape[1]} features exceed "
                f"max_features={self.max_features}")
        if not 1 <= n_classes <= self.max_classes:
            raise ValueError(
                f"n_classes={n_classes} outside [1, {self.max_classes}]")
        if ctx_y.size and (ctx_y.min() < 0 or ctx_y.max() >= n_classes):
            raise ValueError("context labels outside [0, n_classes)")
        return ctx_x, ctx_y, qry_x, n_classes

    def predict(self, msg: dict) -> dict:
        try:
            ctx_x, ctx_y, qry_x, n_classes = self._validated_arrays(msg)
        except ValueError as e:
            return {"op": "error", "msg": str(e)}
        n_ensemble = int(msg.get("n_ensemble", 1))
        seed = int(msg.get("seed", 0))
        parts = []
        for s in range(0, qry_x.shape[0], self.query_chunk):
            chunk = qry_x[s:s + self.query_chunk]
            rows = np.asarray(self.model.predict_proba(
                ctx_x, ctx_y, chunk, n_classes=n_classes,
                n_ensemble=n_ensemble, seed=seed), dtype=np.float64)
            if rows.shape != (chunk.shape[0], n_classes):
                raise ValueError(
                    f"model returned shape {rows.shape}, expected "
                    f"{(chunk.shape[0], n_classes)}")
            if not np.isfinite(rows).all() or (rows < 0).any():
                raise ValueError("model returned negative or non-finite "
                                 "probabilities")
            sums = rows.sum(axis=1)
            if (sums <= 0).any():
                raise ValueError("model returned an all-zero row")
            rows = rows / sums[:, None]
            parts.append(rows)
            self.chunks_run += 1
        out = np.concatenate(parts, axis=0)
        assert np.abs(out.sum(axis=1) - 1.0).max() <= ROW_SUM_TOL
        self.requests_handled += 1
        return {"op": "probs", "rows": out.tolist()}


def serve(model, stdin, stdout, session: BridgeSession | None = None) -> BridgeSession:
    """Blocking serve loop; returns the session after shutdown/EOF."""
    session = session or BridgeSession(model=model)
    for line in stdin:
        reply = session.handle_line(line)
        if reply is None:
            break
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()
    return session
