"""Tournament evaluation: per-dataset rankings, Condorcet voting, mean
ranks over shared datasets, and the Wilcoxon signed-rank test.

Per dataset, algorithms that ran successfully are ranked by the primary
metric averaged over folds (higher is better), ties broken by mean log
likelihood, residual ties sharing the average rank. An algorithm collects
one vote for every (dataset, opponent) pair it outranks; a pair's winner
is whoever collects more per-dataset wins against the other; the
Condorcet winner beats every opponent pairwise. Failed runs simply drop
out of that dataset's ranking.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (NoResults, NoSharedDatasets, ShapeMismatch,
                     TooFewPairs)

LOG_LIKELIHOOD = "log_likelihood"
ACCURACY = "accuracy"


@dataclass
class ResultRecord:
    algorithm: str
    dataset: str
    fold: int
    accuracy: float | None
    mean_log_likelihood: float | None
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class CondorcetTally:
    algorithms: list[str]
    votes: dict[str, int]
    wins: dict[str, int]
    ties: dict[str, int]
    losses: dict[str, int]
    pairwise: dict[tuple[str, str], tuple[int, int, int]]
    winner: str | None = field(default=None)


def metrics(probs: np.ndarray, labels: np.ndarray,
            floor: float = 1e-15) -> tuple[float, float]:
    """(accuracy, mean log likelihood) of a probability matrix.

    Argmax ties go to the lowest class index; probabilities are floored
    before the log so a hard zero on the true class stays finite.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
        raise ShapeMismatch(
            f"probs {probs.shape} vs labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ShapeMismatch("labels outside the class range")
    pred = probs.argmax(axis=1)
    accuracy = float((pred == labels).mean())
    p_true = probs[np.arange(labels.size), labels]
    mean_ll = float(np.log(np.maximum(p_true, floor)).mean())
    return accuracy, mean_ll


def _dataset_means(records: list[ResultRecord], dataset: str,
                   metric: str) -> dict[str, tuple[float, float]]:
    """algorithm -> (mean primary metric, mean log likelihood) over ok
    folds of one dataset."""
    per_alg: dict[str, list[ResultRecord]] = {}
    for r in records:
        if r.dataset == dataset and r.ok:
            per_alg.setdefault(r.algorithm, []).append(r)
    out = {}
    for alg, rs in per_alg.items():
        lls = [r.mean_log_likelihood for r in rs]
        accs = [r.accuracy for r in rs]
        primary = accs if metric == ACCURACY else lls
        out[alg] = (float(np.mean(primary)), float(np.mean(lls)))
    return out


def rank_algorithms(records: list[ResultRecord], dataset: str,
                    metric: str = LOG_LIKELIHOOD) -> dict[str, float]:
    """Fractional ranks (1 = best) for every algorithm that ran on the
    dataset."""
    means = _dataset_means(records, dataset, metric)
    if not means:
        raise NoResults(dataset)
    keyed = sorted(means.items(), key=lambda kv: (-kv[1][0], -kv[1][1],
                                                  kv[0]))
    ranks: dict[str, float] = {}
    pos = 0
    while pos < len(keyed):
        end = pos
        while (end + 1 < len(keyed)
               and keyed[end + 1][1] == keyed[pos][1]):
            end += 1
        avg_rank = (pos + end) / 2 + 1
        for i in range(pos, end + 1):
            ranks[keyed[i][0]] = avg_rank
        pos = end + 1
    return ranks


def condorcet(records: list[ResultRecord],
              metric: str = LOG_LIKELIHOOD) -> CondorcetTally:
    """Vote counts, pairwise outcomes, and the Condorcet winner if any.

    Algorithms with no successful record anywhere never enter a ranking
    and are left out of the tally entirely.
    """
    algorithms = sorted({r.algorithm for r in records if r.ok})
    if len(algorithms) < 2:
        raise ValueError("need at least 2 algorithms with results")
    datasets = sorted({r.dataset for r in records})
    rankings = {}
    for ds in datasets:
        try:
            rankings[ds] = rank_algorithms(records, ds, metric)
        except NoResults:
            continue

    cell: dict[tuple[str, str], list[int]] = {
        (a, b): [0, 0, 0] for a in algorithms for b in algorithms if a != b}
    for ranks in rankings.values():
        present = [a for a in algorithms if a in ranks]
        for i, a in enumerate(present):
            for b in present[i + 1:]:
                if ranks[a] < ranks[b]:
                    cell[(a, b)][0] += 1
                    cell[(b, a)][2] += 1
                elif ranks[a] > ranks[b]:
                    cell[(a, b)][2] += 1
                    cell[(b, a)][0] += 1
                else:
                    cell[(a, b)][1] += 1
                    cell[(b, a)][1] += 1

    votes = {a: 0 for a in algorithms}
    wins = {a: 0 for a in algorithms}
    ties = {a: 0 for a in algorithms}
    losses = {a: 0 for a in algorithms}
    for a in algorithms:
        for b in algorithms:
            if a == b:
                continue
            w, _, l = cell[(a, b)]
            votes[a] += w
            if w > l:
                wins[a] += 1
            elif w < l:
                losses[a] += 1
            else:
                ties[a] += 1
    winner = None
    for a in algorithms:
        if wins[a] == len(algorithms) - 1:
            winner = a
            break
    return CondorcetTally(
        algorithms=algorithms, votes=votes, wins=wins, ties=ties,
        losses=losses,
        pairwise={k: tuple(v) for k, v in cell.items()}, winner=winner)


def mean_rank_table(records: list[ResultRecord],
                    algorithm_subset: list[str],
                    metric: str = LOG_LIKELIHOOD) -> dict[str, dict]:
    """Rank statistics over the datasets every subset member ran on."""
    subset = list(dict.fromkeys(algorithm_subset))
    sub_records = [r for r in records if r.algorithm in subset]
    datasets = sorted({r.dataset for r in sub_records})
    shared = []
    for ds in datasets:
        who = {r.algorithm for r in sub_records if r.dataset == ds and r.ok}
        if set(subset) <= who:
            shared.append(ds)
    if not shared:
        raise NoSharedDatasets(
            f"no dataset has successful runs of all of {subset}")
    per_alg: dict[str, list[float]] = {a: [] for a in subset}
    for ds in shared:
        ranks = rank_algorithms(sub_records, ds, metric)
        for a in subset:
            per_alg[a].append(ranks[a])
    out = {}
    for a in subset:
        arr = np.array(per_alg[a])
        out[a] = {
            "mean": float(arr.mean()),
            "std": float(arr.std()),
            "median": float(np.median(arr)),
            "min": float(arr.min()),
            "max": float(arr.max()),
            "n_datasets": int(arr.size),
        }
    return out


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def wilcoxon_signed_rank(x, y, exact_max_n: int = 12) -> tuple[float, float]:
    """(W+, two-sided p) for paired samples.

    Zero differences are discarded; absolute differences get average
    ranks. Up to `exact_max_n` surviving pairs the p-value enumerates all
    sign assignments; beyond that it uses the normal approximation with
    tie and continuity corrections.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeMismatch(f"{x.shape} vs {y.shape}")
    d = x - y
    d = d[d != 0]
    n = d.size
    if n < 5:
        raise TooFewPairs(f"{n} nonzero differences, need at least 5")
    order = np.argsort(np.abs(d), kind="stable")
    ranks = np.empty(n)
    sorted_abs = np.abs(d)[order]
    pos = 0
    while pos < n:
        end = pos
        while end + 1 < n and sorted_abs[end + 1] == sorted_abs[pos]:
            end += 1
        ranks[order[pos:end + 1]] = (pos + end) / 2 + 1
        pos = end + 1
    w_plus = float(ranks[d > 0].sum())
    total = n * (n + 1) / 2
    mu = total / 2

    if n <= exact_max_n:
        # all 2^n sign assignments; ties make ranks fractional, so compare
        # with a hair of tolerance
        margin = abs(w_plus - mu) - 1e-9
        count = 0
        for mask in range(1 << n):
            w = 0.0
            for i in range(n):
                if mask >> i & 1:
                    w += ranks[i]
            if abs(w - mu) >= margin:
                count += 1
        return w_plus, count / (1 << n)

    _, tie_counts = np.unique(sorted_abs, return_counts=True)
    tie_term = float((tie_counts.astype(np.float64) ** 3
                      - tie_counts).sum()) / 48.0
    sigma2 = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
    sigma = math.sqrt(sigma2)
    delta = w_plus - mu
    cc = 0.5 if delta > 0 else (-0.5 if delta < 0 else 0.0)
    z = (delta - cc) / sigma
    return w_plus, min(1.0, 2.0 * _normal_sf(abs(z)))


# -- CSV surfaces ------------------------------------------------------------

def read_records(path: str) -> list[ResultRecord]:
    """Parse `algorithm,dataset,fold,accuracy,mean_ll,status` rows."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"algorithm", "dataset", "fold", "accuracy", "mean_ll",
                "status"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(
                f"{path}: header must contain {sorted(need)}")
        for line_no, row in enumerate(reader, start=2):
            try:
                status = row["status"].strip() or "ok"
                failed = status != "ok"
                out.append(ResultRecord(
                    algorithm=row["algorithm"].strip(),
                    dataset=row["dataset"].strip(),
                    fold=int(row["fold"]),
                    accuracy=None if failed else float(row["accuracy"]),
                    mean_log_likelihood=(None if failed
                                         else float(row["mean_ll"])),
                    status=status))
            except (KeyError, ValueError) as e:
                raise ValueError(f"{path}:{line_no}: bad record: {e}") from e
    return out


def write_condorcet_csv(tally: CondorcetTally, path: str) -> None:
    order = sorted(tally.algorithms,
                   key=lambda a: (-tally.votes[a], -tally.wins[a], a))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("algorithm,votes,wins,ties,losses\n")
        for a in order:
            fh.write(f"{a},{tally.votes[a]},{tally.wins[a]},"
                     f"{tally.ties[a]},{tally.losses[a]}\n")


def write_mean_rank_csv(table: dict[str, dict], path: str) -> None:
    order = sorted(table, key=lambda a: (table[a]["mean"], a))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("algorithm,mean_rank,std_rank,median_rank,min_rank,"
                 "max_rank,n_datasets\n")
        for a in order:
            t = table[a]
            fh.write(f"{a},{t['mean']!r},{t['std']!r},{t['median']!r},"
                     f"{t['min']!r},{t['max']!r},{t['n_datasets']}\n")


def write_pairwise_csv(tally: CondorcetTally, path: str) -> None:
    algs = tally.algorithms
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("algorithm," + ",".join(algs) + "\n")
        for a in algs:
            cells = []
            for b in algs:
                if a == b:
                    cells.append("-")
                else:
                    w, t, l = tally.pairwise[(a, b)]
                    cells.append(f"{w}/{t}/{l}")
            fh.write(a + "," + ",".join(cells) + "\n")
