"""Context-aware finetuning of the reference predictor's adapters.

Training prompts are bootstrapped from the downstream training set in one
of two ways: the large-dataset policy draws a uniform seed row and takes
its B nearest neighbors (simulating how prompter contexts are built at
inference), the small-dataset policy draws a 90% subsample. Either way
the drawn rows split 90/10 into a disjoint context (subtrain) and query
(subtest) side, and the mean negative log likelihood of the true query
labels is minimized by Adam over the adapter parameters only; the kernel
bandwidth is the frozen base model and never receives a gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import TabularDataset
from .micp import Prompt
from .neighbors import NeighborIndex
from .predictor import ReferencePredictor, forward_parts

LARGE_KNN = "large_knn"
SMALL_SPLIT = "small_split"
AUTO_THRESHOLD = 3000  # rows above which the large-dataset policy kicks in


@dataclass
class BootstrapSample:
    subtrain_features: np.ndarray
    subtrain_labels: np.ndarray
    subtest_features: np.ndarray
    subtest_labels: np.ndarray
    origin: str
    subtrain_rows: np.ndarray
    subtest_rows: np.ndarray


@dataclass
class FinetuneConfig:
    iterations: int = 128
    batch_queries: int = 64
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    mode: str = "auto"          # auto | large | small
    bootstrap_context: int = 3000

    def resolve_mode(self, n_train: int) -> str:
        if self.mode == "auto":
            return "large" if n_train > AUTO_THRESHOLD else "small"
        if self.mode not in ("large", "small"):
            raise ValueError(f"unknown finetune mode {self.mode!r}")
        return self.mode


def _split_rows(rows: np.ndarray, rng: np.random.Generator,
                origin: str, ds: TabularDataset) -> BootstrapSample:
    """Shuffle and cut 90/10, both sides guaranteed non-empty."""
    rows = rng.permutation(rows)
    n = rows.size
    n_sub = max(1, min(n - 1, int(np.floor(0.9 * n))))
    subtrain, subtest = rows[:n_sub], rows[n_sub:]
    X = np.asarray(ds.features, dtype=np.float64)
    y = np.asarray(ds.labels, dtype=np.int64)
    return BootstrapSample(subtrain_features=X[subtrain],
                           subtrain_labels=y[subtrain],
                           subtest_features=X[subtest],
                           subtest_labels=y[subtest], origin=origin,
                           subtrain_rows=subtrain, subtest_rows=subtest)


def sample_bootstrap_large(train: TabularDataset, B: int, seed: int,
                           train_index: NeighborIndex | None = None
                           ) -> BootstrapSample:
    """Uniform seed row, its B nearest neighbors (seed included), 90/10."""
    if train.n_rows < 2:
        raise ValueError("need at least 2 rows to bootstrap")
    rng = np.random.default_rng(seed)
    X = np.asarray(train.features, dtype=np.float64)
    if train_index is None:
        train_index = NeighborIndex(X)
    anchor = int(rng.integers(train.n_rows))
    k = min(B, train.n_rows)
    ids, _ = train_index.knn_batch(X[anchor:anchor + 1], k)
    return _split_rows(ids[0], rng, LARGE_KNN, train)


def sample_bootstrap_small(train: TabularDataset, seed: int) -> BootstrapSample:
    """90% of rows as context, the rest as queries, without replacement."""
    if train.n_rows < 2:
        raise ValueError("need at least 2 rows to bootstrap")
    rng = np.random.default_rng(seed)
    return _split_rows(np.arange(train.n_rows), rng, SMALL_SPLIT, train)


def _sample_prompt(sample: BootstrapSample, n_classes: int,
                   max_queries: int | None = None) -> Prompt:
    Xq = sample.subtest_features
    yq = sample.subtest_labels
    if max_queries is not None and Xq.shape[0] > max_queries:
        Xq = Xq[:max_queries]
        yq = yq[:max_queries]
    return Prompt(context_features=sample.subtrain_features,
                  context_labels=sample.subtrain_labels,
                  query_features=Xq, n_classes=n_classes), yq


def nll_loss(pred: ReferencePredictor, sample: BootstrapSample,
             max_queries: int | None = None) -> float:
    """Mean negative log probability of the true subtest labels, with the
    subtrain rows as context."""
    prompt, y_true = _sample_prompt(sample, pred.n_classes, max_queries)
    probs, log_s = forward_parts(pred, prompt)
    scores = pred.temperature * log_s + pred.bias[None, :]
    log_z = np.log(np.exp(scores - scores.max(1, keepdims=True))
                   .sum(1)) + scores.max(1)
    log_p_true = scores[np.arange(y_true.size), y_true] - log_z
    return float(-log_p_true.mean())


def grad_adapters(pred: ReferencePredictor, sample: BootstrapSample,
                  max_queries: int | None = None
                  ) -> tuple[float, np.ndarray]:
    """Analytic d loss / d (temperature, bias); the bandwidth is frozen
    and gets no gradient."""
    prompt, y_true = _sample_prompt(sample, pred.n_classes, max_queries)
    probs, log_s = forward_parts(pred, prompt)
    n = y_true.size
    resid = probs.copy()
    resid[np.arange(n), y_true] -= 1.0
    resid /= n
    d_temp = float((resid * log_s).sum())
    d_bias = resid.sum(axis=0)
    return d_temp, d_bias


def finetune(pred: ReferencePredictor, train: TabularDataset,
             cfg: FinetuneConfig
             ) -> tuple[ReferencePredictor, list[tuple[int, float]]]:
    """One Adam step per bootstrap draw for cfg.iterations steps.

    Returns the predictor with updated adapters (same bandwidth object
    value) and the (iteration, loss) curve.
    """
    mode = cfg.resolve_mode(train.n_rows)
    root = np.random.SeedSequence(cfg.seed)
    draw_seeds = root.spawn(cfg.iterations)
    X = np.asarray(train.features, dtype=np.float64)
    train_index = NeighborIndex(X) if mode == "large" else None

    C = pred.n_classes
    params = np.concatenate([[pred.temperature], pred.bias])
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    curve: list[tuple[int, float]] = []
    for t in range(1, cfg.iterations + 1):
        seed = draw_seeds[t - 1].generate_state(1)[0]
        if mode == "large":
            sample = sample_bootstrap_large(train, cfg.bootstrap_context,
                                            int(seed),
                                            train_index=train_index)
        else:
            sample = sample_bootstrap_small(train, int(seed))
        step_pred = pred.with_adapters(params[0], params[1:])
        loss = nll_loss(step_pred, sample, max_queries=cfg.batch_queries)
        d_temp, d_bias = grad_adapters(step_pred, sample,
                                       max_queries=cfg.batch_queries)
        grad = np.concatenate([[d_temp], d_bias])
        m = cfg.beta1 * m + (1 - cfg.beta1) * grad
        v = cfg.beta2 * v + (1 - cfg.beta2) * grad * grad
        m_hat = m / (1 - cfg.beta1 ** t)
        v_hat = v / (1 - cfg.beta2 ** t)
        params = params - cfg.learning_rate * m_hat / (np.sqrt(v_hat)
                                                       + cfg.adam_epsilon)
        curve.append((t, loss))
    out = pred.with_adapters(params[0], params[1:])
    assert out.bandwidth == pred.bandwidth
    return out, curve


def write_curve(curve: list[tuple[int, float]], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iter,loss\n")
        for it, loss in curve:
            fh.write(f"{it},{loss!r}\n")
