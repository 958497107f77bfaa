"""Install health check: run a fixed synthetic prompt through the loaded
model twice and verify row normalization and seeded determinism."""

from __future__ import annotations

import sys

import numpy as np

from .model import ModelUnavailable, load_model
from .server import BridgeSession


def build_fixed_prompt():
    rng = np.random.default_rng(42)
    ctx_x = np.vstack([rng.normal(-2, 0.5, size=(10, 3)),
                       rng.normal(+2, 0.5, size=(10, 3))])
    ctx_y = np.array([0] * 10 + [1] * 10)
    qry_x = rng.normal(0, 2, size=(6, 3))
    return {
        "op": "predict",
        "ctx_x": ctx_x.tolist(),
        "ctx_y": ctx_y.tolist(),
        "qry_x": qry_x.tolist(),
        "n_classes": 2,
        "n_ensemble": 2,
        "seed": 7,
    }


def selftest(model_name: str = "tabpfn", out=sys.stderr) -> int:
    """Returns 0 on pass, 1 on failure, with an actionable message."""
    try:
        model = load_model(model_name)
    except ModelUnavailable as e:
        print(f"selftest FAIL: {e}", file=out)
        return 1
    session = BridgeSession(model=model)
    msg = build_fixed_prompt()
    first = session.predict(msg)
    second = session.predict(msg)
    for reply in (first, second):
        if reply.get("op") != "probs":
            print(f"selftest FAIL: predict replied {reply}", file=out)
            return 1
        rows = np.asarray(reply["rows"])
        if rows.shape != (6, 2):
            print(f"selftest FAIL: bad shape {rows.shape}", file=out)
            return 1
        if np.abs(rows.sum(axis=1) - 1.0).max() > 1e-6:
            print("selftest FAIL: rows not normalized", file=out)
            return 1
    drift = np.abs(np.asarray(first["rows"])
                   - np.asarray(second["rows"])).max()
    if drift > 1e-6:
        print(f"selftest FAIL: seeded calls differ by {drift:.2e}",
              file=out)
        return 1
    print(f"selftest PASS ({model.name}): 2 seeded calls identical "
          f"within 1e-6, rows normalized", file=out)
    return 0
