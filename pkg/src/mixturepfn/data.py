"""Dataset ingestion, preprocessing, and fold splitting.

CSV in, z-scored float matrix out. Preprocessing imputes missing cells
(column mean for numerics, mode for categoricals), encodes categoricals
as first-appearance ordinals, winsorizes cells at +/-4 column standard
deviations, and standardizes each column to mean 0 / std 1 (population
std; constant columns become all zeros). The clip/standardize pair is
iterated to a fixpoint so a second application is a no-op, and the
statistics can be restricted to a train subset so test rows never leak
into them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (AllMissingColumn, EmptyDataset, MissingLabelColumn,
                     RaggedRow, TooFewRows, TooManyClasses, UnknownLabel)

MISSING_TOKENS = {"", "NaN", "nan", "?"}

NUMERIC = "numeric"
CATEGORICAL = "categorical"
ORDINAL = "ordinal"


@dataclass
class TabularDataset:
    """Feature matrix plus integer class labels.

    Before `preprocess` the matrix is object-dtype: numeric cells are
    floats (NaN when missing), categorical cells are strings (None when
    missing). Afterwards it is float64 and NaN-free.
    """

    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    feature_kinds: list[str]
    column_names: list[str]
    label_name: str = "label"
    label_values: list[str] = field(default_factory=list)
    preprocessed: bool = False

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclass
class FoldSplit:
    fold_index: int
    train_indices: np.ndarray
    test_indices: np.ndarray
    dev_fraction: float
    stratified: bool


def _parse_cell(token: str) -> tuple[bool, float | str | None]:
    """Returns (is_numeric, value); value None means missing."""
    token = token.strip()
    if token in MISSING_TOKENS:
        return True, None
    try:
        return True, float(token)
    except ValueError:
        return False, token


def load_csv(path: str, label_column: str,
             schema: dict[str, str] | None = None,
             max_classes: int | None = 10,
             label_vocabulary: list[str] | None = None) -> TabularDataset:
    """Parse a header-bearing CSV into a raw (pre-preprocess) dataset.

    `label_vocabulary` pins the label-to-integer mapping (for scoring a
    test file against a model fitted on the train file's labels); an
    unseen label raises.
    """
    schema = schema or {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDataset(f"{path}: no header row")
        header = [h.strip() for h in header]
        if label_column not in header:
            raise MissingLabelColumn(label_column)
        label_pos = header.index(label_column)
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise RaggedRow(line_no, len(row), len(header))
            rows.append(row)
    if not rows:
        raise EmptyDataset(f"{path}: no data rows")

    feature_cols = [j for j in range(len(header)) if j != label_pos]
    column_names = [header[j] for j in feature_cols]
    n, d = len(rows), len(feature_cols)

    # column kinds: numeric unless some non-missing cell fails to parse,
    # overridable per column
    parsed = [[_parse_cell(rows[i][j]) for i in range(n)] for j in feature_cols]
    kinds = []
    for cj, name in enumerate(column_names):
        if name in schema:
            kinds.append(schema[name])
        else:
            numeric = all(ok for ok, _ in parsed[cj])
            kinds.append(NUMERIC if numeric else CATEGORICAL)

    features = np.empty((n, d), dtype=object)
    for cj, kind in enumerate(kinds):
        for i in range(n):
            raw = rows[i][feature_cols[cj]].strip()
            if raw in MISSING_TOKENS:
                features[i, cj] = None
            elif kind == CATEGORICAL:
                features[i, cj] = raw
            else:
                ok, val = _parse_cell(raw)
                features[i, cj] = val if ok else raw

    # labels: distinct values in first-appearance order, unless pinned
    if label_vocabulary is not None:
        label_map = {tok: i for i, tok in enumerate(label_vocabulary)}
        frozen = True
    else:
        label_map = {}
        frozen = False
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        tok = rows[i][label_pos].strip()
        if tok not in label_map:
            if frozen:
                raise UnknownLabel(path, tok)
            label_map[tok] = len(label_map)
        labels[i] = label_map[tok]
    n_classes = len(label_map)
    if max_classes is not None and n_classes > max_classes:
        raise TooManyClasses(n_classes, max_classes)

    return TabularDataset(features=features, labels=labels,
                          n_classes=n_classes, feature_kinds=kinds,
                          column_names=column_names, label_name=label_column,
                          label_values=list(label_map))


def _encode_column(cells: list, kind: str, name: str,
                   stats_rows: np.ndarray,
                   categorical_encoding: str = "ordinal") -> np.ndarray:
    """One raw column to floats with NaN for missing.

    Imputation and encoding statistics (means, modes, frequencies) come
    from `stats_rows` only, so test rows never shape them.
    """
    stats_set = set(int(i) for i in stats_rows)
    if kind == CATEGORICAL:
        observed = [c for i, c in enumerate(cells)
                    if c is not None and i in stats_set]
        if not observed:
            raise AllMissingColumn(name)
        # mode, ties to first appearance
        counts: dict = {}
        for c in observed:
            counts[c] = counts.get(c, 0) + 1
        first_seen = list(counts)
        mode = max(counts,
                   key=lambda c: (counts[c], -first_seen.index(c)))
        imputed = [mode if c is None else c for c in cells]
        out = np.empty(len(cells))
        if categorical_encoding == "frequency":
            n_stats = len(stats_set)
            for i, c in enumerate(imputed):
                out[i] = counts.get(c, 0) / n_stats
        else:
            codes: dict = {}
            for i, c in enumerate(imputed):
                if c not in codes:
                    codes[c] = len(codes)
                out[i] = codes[c]
        return out
    if kind == ORDINAL and any(isinstance(c, str) for c in cells):
        # string-levelled ordinal column: ranks by sorted level name
        levels = sorted({str(c) for c in cells if c is not None})
        rank = {lv: float(i) for i, lv in enumerate(levels)}
        cells = [None if c is None else rank[str(c)] for c in cells]
    # numeric / ordinal: strings in a declared-numeric column are treated
    # as missing rather than crashing the pipeline
    out = np.empty(len(cells))
    for i, c in enumerate(cells):
        if c is None or isinstance(c, str):
            out[i] = np.nan
        else:
            out[i] = c
    observed = out[stats_rows]
    observed = observed[~np.isnan(observed)]
    if observed.size == 0:
        raise AllMissingColumn(name)
    out[np.isnan(out)] = observed.mean()
    return out


def _clip_standardize(col: np.ndarray, stats_rows: np.ndarray,
                      max_rounds: int = 100) -> np.ndarray:
    """Winsorize at +/-4 sigma and z-score, iterated to a fixpoint.

    The iteration guarantees idempotence: after it converges the column's
    own statistics produce clip bounds that no cell exceeds.
    """
    col = col.astype(np.float64).copy()
    for _ in range(max_rounds):
        m = col[stats_rows].mean()
        s = col[stats_rows].std()
        if s <= 0:
            return np.zeros_like(col)
        lo, hi = m - 4 * s, m + 4 * s
        clipped = np.clip(col, lo, hi)
        if np.array_equal(clipped, col):
            break
        col = clipped
    m = col[stats_rows].mean()
    s = col[stats_rows].std()
    if s <= 0:
        return np.zeros_like(col)
    return (col - m) / s


def preprocess(ds: TabularDataset,
               train_indices: np.ndarray | None = None,
               categorical_encoding: str = "ordinal") -> TabularDataset:
    """Impute, encode, winsorize, and standardize a dataset.

    When `train_indices` is given, imputation values, clip bounds, and
    normalization statistics come from those rows only and are applied to
    the rest. Idempotent: preprocessing an already-preprocessed dataset
    changes no cell by more than float round-off.
    """
    if ds.n_rows == 0 or ds.n_features == 0:
        raise EmptyDataset("nothing to preprocess")
    stats_rows = (np.arange(ds.n_rows) if train_indices is None
                  else np.asarray(train_indices, dtype=np.int64))

    if ds.preprocessed and ds.features.dtype == np.float64:
        numeric = ds.features.copy()
        for j, name in enumerate(ds.column_names):
            col = numeric[:, j]
            miss = np.isnan(col)
            if miss.all():
                raise AllMissingColumn(name)
            if miss.any():
                col[miss] = col[~miss].mean()
    else:
        numeric = np.empty((ds.n_rows, ds.n_features))
        for j, (kind, name) in enumerate(zip(ds.feature_kinds,
                                             ds.column_names)):
            numeric[:, j] = _encode_column(list(ds.features[:, j]), kind,
                                           name, stats_rows,
                                           categorical_encoding)

    for j in range(numeric.shape[1]):
        numeric[:, j] = _clip_standardize(numeric[:, j], stats_rows)

    return replace(ds, features=numeric, preprocessed=True)


def combine_and_preprocess(train: TabularDataset, test: TabularDataset,
                           categorical_encoding: str = "ordinal"
                           ) -> tuple[TabularDataset, TabularDataset]:
    """Preprocess a train/test pair with shared encodings and train-only
    statistics, returning the two preprocessed datasets."""
    if train.column_names != test.column_names:
        raise ValueError("train and test column names differ")
    if train.feature_kinds != test.feature_kinds:
        raise ValueError("train and test column kinds differ")
    stacked_features = np.concatenate([train.features, test.features],
                                      axis=0)
    stacked = replace(train,
                      features=stacked_features,
                      labels=np.concatenate([train.labels, test.labels]))
    out = preprocess(stacked, train_indices=np.arange(train.n_rows),
                     categorical_encoding=categorical_encoding)
    n = train.n_rows
    train_out = replace(train, features=out.features[:n], preprocessed=True)
    test_out = replace(test, features=out.features[n:], preprocessed=True)
    return train_out, test_out


def select_features_by_variance(ds: TabularDataset, k: int,
                                categorical_encoding: str = "ordinal"
                                ) -> TabularDataset:
    """Keep the k columns with highest pre-normalization variance.

    Selection looks at imputed, encoded, unstandardized values (after
    z-scoring every column's variance is 1). Column order is preserved.
    """
    if k >= ds.n_features:
        return ds
    variances = np.empty(ds.n_features)
    all_rows = np.arange(ds.n_rows)
    for j, (kind, name) in enumerate(zip(ds.feature_kinds,
                                         ds.column_names)):
        col = _encode_column(list(ds.features[:, j]), kind, name, all_rows,
                             categorical_encoding)
        variances[j] = col.var()
    keep = np.sort(np.argsort(-variances, kind="stable")[:k])
    return replace(ds,
                   features=ds.features[:, keep],
                   feature_kinds=[ds.feature_kinds[j] for j in keep],
                   column_names=[ds.column_names[j] for j in keep])


def kfold_split(ds: TabularDataset, folds: int = 10,
                dev_fraction: float = 0.1, seed: int = 0) -> list[FoldSplit]:
    """Deterministic k-fold partition, stratified by label when every
    class has at least `folds` members."""
    n = ds.n_rows
    if n < folds:
        raise TooFewRows(f"{n} rows cannot fill {folds} folds")
    rng = np.random.default_rng(seed)
    class_counts = np.bincount(ds.labels, minlength=ds.n_classes)
    stratified = bool((class_counts[class_counts > 0] >= folds).all())

    fold_of = np.empty(n, dtype=np.int64)
    if stratified:
        for c in range(ds.n_classes):
            rows = np.flatnonzero(ds.labels == c)
            rows = rng.permutation(rows)
            fold_of[rows] = np.arange(rows.size) % folds
    else:
        perm = rng.permutation(n)
        fold_of[perm] = np.arange(n) % folds

    out = []
    for f in range(folds):
        test = np.flatnonzero(fold_of == f)
        train = np.flatnonzero(fold_of != f)
        out.append(FoldSplit(fold_index=f, train_indices=train,
                             test_indices=test, dev_fraction=dev_fraction,
                             stratified=stratified))
    return out


def take_rows(ds: TabularDataset, rows: np.ndarray) -> TabularDataset:
    """Row-subset view of a dataset (labels and features together)."""
    return replace(ds, features=ds.features[rows], labels=ds.labels[rows])


def take_columns(ds: TabularDataset, names: list[str]) -> TabularDataset:
    """Column subset by name, in the order given (for projecting a test
    file onto the columns a feature-capped training set kept)."""
    missing = [n for n in names if n not in ds.column_names]
    if missing:
        raise ValueError(f"columns not in dataset: {missing}")
    keep = [ds.column_names.index(n) for n in names]
    return replace(ds,
                   features=ds.features[:, keep],
                   feature_kinds=[ds.feature_kinds[j] for j in keep],
                   column_names=list(names))
