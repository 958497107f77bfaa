"""In-context predictors.

Two ways to turn a prompt into per-query class probabilities:

* a built-in differentiable reference predictor: per-class Gaussian
  kernel mass around each query, log-compressed, then scaled by a
  trainable temperature and shifted by a trainable per-class bias before
  a softmax. The bandwidth is the frozen base parameter; only the
  temperature and bias move under finetuning, mirroring the frozen-model
  / trainable-adapter split.

* a client for an external predictor process speaking newline-delimited
  JSON over its standard streams (see tabpfn bridge for the server side).

Ensembling follows the standard tabular-ICL recipe: half the members are
seeded feature permutations evaluated on raw features, the other half the
same permutations on signed-square-root rescaled features; member
probability matrices are averaged in a fixed order.
"""

from __future__ import annotations

import json
import shlex
import subprocess
import threading
from dataclasses import dataclass

import numpy as np

from .errors import (BridgeUnavailable, CapabilityExceeded,
                     DimensionMismatch, EmptyContext, ProtocolViolation)
from .micp import Prompt

EPSILON = 1e-12
RENORM_TOL = 1e-3


@dataclass
class ReferencePredictor:
    """Kernel-sum scorer with a frozen bandwidth and trainable adapters.

    Scores: s_c(x) = temperature * log(eps + sum_{i: y_i = c}
    exp(-|x - x_i|^2 / (2 h^2))) + bias_c, softmaxed per row.
    """

    n_classes: int
    bandwidth: float            # h, frozen after construction
    temperature: float = 1.0    # adapter
    bias: np.ndarray = None     # adapter, length n_classes
    epsilon: float = EPSILON

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.bias is None:
            self.bias = np.zeros(self.n_classes)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.bias.shape != (self.n_classes,):
            raise ValueError("bias must have one entry per class")

    def adapters(self) -> tuple[float, np.ndarray]:
        return self.temperature, self.bias.copy()

    def with_adapters(self, temperature: float,
                      bias: np.ndarray) -> "ReferencePredictor":
        return ReferencePredictor(n_classes=self.n_classes,
                                  bandwidth=self.bandwidth,
                                  temperature=float(temperature),
                                  bias=np.asarray(bias, dtype=np.float64),
                                  epsilon=self.epsilon)


def default_bandwidth(n_features: int) -> float:
    return float(np.sqrt(n_features))


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward_parts(pred: ReferencePredictor,
                  prompt: Prompt) -> tuple[np.ndarray, np.ndarray]:
    """(probabilities, log(eps + per-class kernel sums)); the latter is
    what the temperature gradient needs."""
    ctx = np.asarray(prompt.context_features, dtype=np.float64)
    qry = np.asarray(prompt.query_features, dtype=np.float64)
    y = np.asarray(prompt.context_labels, dtype=np.int64)
    if ctx.shape[0] == 0:
        raise EmptyContext("prompt has no context rows")
    if ctx.shape[1] != qry.shape[1]:
        raise DimensionMismatch(
            f"context d={ctx.shape[1]} vs queries d={qry.shape[1]}")
    C = pred.n_classes
    if y.min() < 0 or y.max() >= C:
        raise ValueError("context labels outside [0, n_classes)")

    d2 = ((qry ** 2).sum(1)[:, None] + (ctx ** 2).sum(1)[None, :]
          - 2.0 * qry @ ctx.T)
    np.maximum(d2, 0.0, out=d2)
    kernel = np.exp(-d2 / (2.0 * pred.bandwidth ** 2))
    onehot = np.zeros((ctx.shape[0], C))
    onehot[np.arange(ctx.shape[0]), y] = 1.0
    log_s = np.log(pred.epsilon + kernel @ onehot)
    probs = _softmax(pred.temperature * log_s + pred.bias[None, :])
    return probs, log_s


def predict(pred: ReferencePredictor, prompt: Prompt) -> np.ndarray:
    """Per-query class probabilities; rows are nonnegative and sum to 1."""
    return forward_parts(pred, prompt)[0]


@dataclass
class Capabilities:
    max_context: int
    max_features: int
    max_classes: int
    supports_ensembling: bool = False


class PredictorHandle:
    """Uniform face over the reference predictor and external clients."""

    kind: str
    capabilities: Capabilities

    def __init__(self):
        self.telemetry: dict = {"members_evaluated": 0, "requests_sent": 0}

    def predict_single(self, prompt: Prompt, seed: int = 0) -> np.ndarray:
        raise NotImplementedError

    def close(self):
        pass


class ReferenceHandle(PredictorHandle):
    kind = "reference"

    def __init__(self, predictor: ReferencePredictor):
        super().__init__()
        self.predictor = predictor
        self.capabilities = Capabilities(max_context=2 ** 31,
                                         max_features=2 ** 31,
                                         max_classes=predictor.n_classes,
                                         supports_ensembling=False)

    def predict_single(self, prompt: Prompt, seed: int = 0) -> np.ndarray:
        return predict(self.predictor, prompt)


def check_capabilities(handle: PredictorHandle, prompt: Prompt) -> None:
    caps = handle.capabilities
    if prompt.context_size > caps.max_context:
        raise CapabilityExceeded(
            f"context {prompt.context_size} > max {caps.max_context}")
    if prompt.context_features.shape[1] > caps.max_features:
        raise CapabilityExceeded(
            f"{prompt.context_features.shape[1]} features > max "
            f"{caps.max_features}")
    if prompt.n_classes > caps.max_classes:
        raise CapabilityExceeded(
            f"{prompt.n_classes} classes > max {caps.max_classes}")


def signed_sqrt(X: np.ndarray) -> np.ndarray:
    return np.sign(X) * np.sqrt(np.abs(X))


def _member_permutations(d: int, count: int,
                         rng: np.random.Generator) -> list[np.ndarray]:
    """`count` feature permutations, distinct whenever d! allows it."""
    perms: list[np.ndarray] = []
    seen: set[tuple] = set()
    attempts = 0
    while len(perms) < count and attempts < 50 * count:
        attempts += 1
        p = rng.permutation(d)
        key = tuple(p.tolist())
        if key in seen:
            continue
        seen.add(key)
        perms.append(p)
    while len(perms) < count:  # d! < count: repeats are unavoidable
        perms.append(rng.permutation(d))
    return perms


def _transformed_prompt(prompt: Prompt, perm: np.ndarray,
                        power: bool) -> Prompt:
    ctx = prompt.context_features[:, perm]
    qry = prompt.query_features[:, perm]
    if power:
        ctx = signed_sqrt(ctx)
        qry = signed_sqrt(qry)
    return Prompt(context_features=ctx, context_labels=prompt.context_labels,
                  query_features=qry, n_classes=prompt.n_classes,
                  prompter_id=prompt.prompter_id,
                  query_indices=prompt.query_indices)


def ensemble_predict(handle: PredictorHandle, prompt: Prompt,
                     n_ensemble: int = 16, seed: int = 0) -> np.ndarray:
    """Average of n_ensemble member predictions.

    Members: n_ensemble/2 seeded feature permutations, each run on raw and
    on signed-square-root features. n_ensemble=1 bypasses ensembling (the
    per-query KNN-prompting path). External predictors that ensemble
    natively get a single request carrying n_ensemble and seed.
    """
    check_capabilities(handle, prompt)
    if n_ensemble == 1:
        handle.telemetry["members_evaluated"] = 1
        return handle.predict_single(prompt, seed=seed)
    if n_ensemble < 2 or n_ensemble % 2 != 0:
        raise ValueError("n_ensemble must be 1 or an even number >= 2")

    if handle.capabilities.supports_ensembling and isinstance(
            handle, ExternalHandle):
        handle.telemetry["members_evaluated"] = n_ensemble
        return handle.predict_request(prompt, n_ensemble=n_ensemble,
                                      seed=seed)

    rng = np.random.default_rng(seed)
    perms = _member_permutations(prompt.query_features.shape[1],
                                 n_ensemble // 2, rng)
    total = np.zeros((prompt.n_queries, prompt.n_classes))
    members = 0
    for perm in perms:
        for power in (False, True):
            member = _transformed_prompt(prompt, perm, power)
            total += handle.predict_single(member, seed=seed)
            members += 1
    handle.telemetry["members_evaluated"] = members
    return total / members


class ExternalHandle(PredictorHandle):
    """Client for a child-process predictor speaking one JSON object per
    line on stdin/stdout."""

    kind = "external"

    def __init__(self, command: str):
        super().__init__()
        self.command = command
        self._lock = threading.Lock()  # one request in flight per session
        try:
            self._proc = subprocess.Popen(
                shlex.split(command), stdin=subprocess.PIPE,
                stdout=subprocess.PIPE, text=True, bufsize=1)
        except OSError as e:
            raise BridgeUnavailable(f"cannot launch {command!r}: {e}") from e
        reply = self._roundtrip({"op": "hello"})
        if reply.get("op") != "hello":
            raise ProtocolViolation(f"bad hello reply: {reply}")
        try:
            self.capabilities = Capabilities(
                max_context=int(reply["max_context"]),
                max_features=int(reply["max_features"]),
                max_classes=int(reply["max_classes"]),
                supports_ensembling=bool(reply.get("supports_ensembling",
                                                   False)))
        except KeyError as e:
            raise ProtocolViolation(f"hello missing field {e}") from e

    def _roundtrip(self, msg: dict) -> dict:
        proc = self._proc
        if proc.poll() is not None:
            raise BridgeUnavailable("bridge process has exited")
        try:
            with self._lock:
                proc.stdin.write(json.dumps(msg) + "\n")
                proc.stdin.flush()
                line = proc.stdout.readline()
        except (BrokenPipeError, OSError) as e:
            raise BridgeUnavailable(f"bridge stream failed: {e}") from e
        if not line:
            raise BridgeUnavailable("bridge closed its output stream")
        self.telemetry["requests_sent"] += 1
        try:
            return json.loads(line)
        except json.JSONDecodeError as e:
            raise ProtocolViolation(f"reply is not JSON: {line!r}") from e

    def predict_request(self, prompt: Prompt, n_ensemble: int,
                        seed: int) -> np.ndarray:
        check_capabilities(self, prompt)
        reply = self._roundtrip({
            "op": "predict",
            "ctx_x": prompt.context_features.tolist(),
            "ctx_y": [int(v) for v in prompt.context_labels],
            "qry_x": prompt.query_features.tolist(),
            "n_classes": prompt.n_classes,
            "n_ensemble": n_ensemble,
            "seed": seed,
        })
        if reply.get("op") == "error":
            raise ProtocolViolation(
                f"bridge error: {reply.get('msg', '<no message>')}")
        if reply.get("op") != "probs" or "rows" not in reply:
            raise ProtocolViolation(f"unexpected reply: {reply}")
        rows = np.asarray(reply["rows"], dtype=np.float64)
        if rows.shape != (prompt.n_queries, prompt.n_classes):
            raise ProtocolViolation(
                f"expected {(prompt.n_queries, prompt.n_classes)} rows, "
                f"got {rows.shape}")
        if not np.isfinite(rows).all() or (rows < 0).any():
            raise ProtocolViolation("rows contain negative or non-finite "
                                    "probabilities")
        sums = rows.sum(axis=1)
        if (np.abs(sums - 1.0) > RENORM_TOL).any():
            worst = float(np.abs(sums - 1.0).max())
            raise ProtocolViolation(
                f"row sums off by {worst:.3g} (> {RENORM_TOL})")
        return rows / sums[:, None]

    def predict_single(self, prompt: Prompt, seed: int = 0) -> np.ndarray:
        return self.predict_request(prompt, n_ensemble=1, seed=seed)

    def close(self):
        if self._proc.poll() is None:
            try:
                self._proc.stdin.write(json.dumps({"op": "shutdown"}) + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError):
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()


def predict_external(handle: ExternalHandle, prompt: Prompt,
                     n_ensemble: int = 1, seed: int = 0) -> np.ndarray:
    """One protocol request for one prompt, with reply validation."""
    return handle.predict_request(prompt, n_ensemble=n_ensemble, seed=seed)
