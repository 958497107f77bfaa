import numpy as np
import pytest

from mixturepfn.data import (TabularDataset, kfold_split, load_csv,
                             preprocess, take_rows)
from mixturepfn.errors import (AllMissingColumn, EmptyDataset,
                               MissingLabelColumn, RaggedRow, TooFewRows,
                               TooManyClasses)


def write_csv(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_load_basic(tmp_path):
    path = write_csv(tmp_path, "a,b,y\n1,2,0\n3,?,1\n5,6,0\n")
    ds = load_csv(path, "y")
    assert ds.n_rows == 3 and ds.n_features == 2
    assert ds.n_classes == 2
    assert ds.features[1, 1] is None
    assert ds.features[0, 0] == 1.0
    assert ds.labels.tolist() == [0, 1, 0]


def test_missing_token_variants(tmp_path):
    path = write_csv(tmp_path,
                     "a,b,y\n1,x,0\nNaN,?,1\nnan,,0\n , x ,1\n")
    ds = load_csv(path, "y")
    assert ds.feature_kinds == ["numeric", "categorical"]
    assert ds.features[1, 0] is None and ds.features[2, 0] is None
    assert ds.features[3, 0] is None  # whitespace-only cell
    assert ds.features[1, 1] is None and ds.features[2, 1] is None
    assert ds.features[3, 1] == "x"  # cells are stripped


def test_load_single_class_is_legal(tmp_path):
    path = write_csv(tmp_path, "a,y\n1,x\n2,x\n")
    ds = load_csv(path, "y")
    assert ds.n_classes == 1


def test_ragged_row(tmp_path):
    path = write_csv(tmp_path, "a,b\n1,2\n1,2,3\n")
    with pytest.raises(RaggedRow) as e:
        load_csv(path, "b")
    assert e.value.line_no == 3
    assert e.value.got == 3


def test_missing_label_column(tmp_path):
    path = write_csv(tmp_path, "a,b\n1,2\n")
    with pytest.raises(MissingLabelColumn):
        load_csv(path, "nope")


def test_too_many_classes(tmp_path):
    rows = "\n".join(f"{i},{i}" for i in range(12))
    path = write_csv(tmp_path, "a,y\n" + rows + "\n")
    with pytest.raises(TooManyClasses):
        load_csv(path, "y")
    ds = load_csv(path, "y", max_classes=None)
    assert ds.n_classes == 12


def test_categorical_inference_and_schema_override(tmp_path):
    path = write_csv(tmp_path, "color,size,y\nred,1,0\nblue,2,1\nred,3,0\n")
    ds = load_csv(path, "y")
    assert ds.feature_kinds == ["categorical", "numeric"]
    ds2 = load_csv(path, "y", schema={"size": "categorical"})
    assert ds2.feature_kinds == ["categorical", "categorical"]


def test_ordinal_string_levels(tmp_path):
    path = write_csv(tmp_path,
                     "grade,y\nlow,0\nhigh,1\nmedium,0\nlow,1\n")
    ds = load_csv(path, "y", schema={"grade": "ordinal"})
    out = preprocess(ds)
    # sorted level names: high < low < medium, so the standardized codes
    # preserve that order
    col = out.features[:, 0]
    assert col[1] < col[0] == col[3] < col[2]


def test_impute_mean():
    ds = TabularDataset(
        features=np.array([[1.0], [None], [3.0]], dtype=object),
        labels=np.zeros(3, dtype=np.int64), n_classes=1,
        feature_kinds=["numeric"], column_names=["a"])
    out = preprocess(ds)
    # imputed cell sits at the (pre-normalization) mean, i.e. z-score 0
    assert out.features[1, 0] == pytest.approx(0.0, abs=1e-12)
    assert not np.isnan(out.features).any()


def test_categorical_first_appearance_codes():
    ds = TabularDataset(
        features=np.array([["red"], ["blue"], ["red"]], dtype=object),
        labels=np.zeros(3, dtype=np.int64), n_classes=1,
        feature_kinds=["categorical"], column_names=["c"])
    # inspect codes before normalization via a two-value check: the two
    # distinct categories must map to two distinct standardized values,
    # with rows 0 and 2 equal
    out = preprocess(ds)
    assert out.features[0, 0] == out.features[2, 0]
    assert out.features[0, 0] != out.features[1, 0]


def scalar_clip_standardize(values):
    # independent straight-line recompute of clip-then-standardize
    vals = list(values)
    while True:
        m = sum(vals) / len(vals)
        s = (sum((v - m) ** 2 for v in vals) / len(vals)) ** 0.5
        if s <= 0:
            return [0.0] * len(vals)
        lo, hi = m - 4 * s, m + 4 * s
        new = [min(max(v, lo), hi) for v in vals]
        if new == vals:
            break
        vals = new
    m = sum(vals) / len(vals)
    s = (sum((v - m) ** 2 for v in vals) / len(vals)) ** 0.5
    return [(v - m) / s for v in vals]


def test_outlier_clip_matches_scalar_recompute():
    raw = [0.0, 0.0, 0.0, 1000.0]
    ds = TabularDataset(
        features=np.array([[v] for v in raw], dtype=object),
        labels=np.zeros(4, dtype=np.int64), n_classes=1,
        feature_kinds=["numeric"], column_names=["a"])
    out = preprocess(ds)
    want = scalar_clip_standardize(raw)
    np.testing.assert_allclose(out.features[:, 0], want, atol=1e-12)


def test_normalization_invariant():
    rng = np.random.default_rng(0)
    raw = rng.normal(3, 7, size=(200, 4))
    raw[:, 2] = 5.0  # constant column
    ds = TabularDataset(features=raw.astype(object),
                        labels=np.zeros(200, dtype=np.int64), n_classes=1,
                        feature_kinds=["numeric"] * 4,
                        column_names=list("abcd"))
    out = preprocess(ds)
    for j in (0, 1, 3):
        assert abs(out.features[:, j].mean()) < 1e-9
        assert abs(out.features[:, j].std() - 1) < 1e-6
    assert (out.features[:, 2] == 0).all()


def test_preprocess_idempotent():
    rng = np.random.default_rng(1)
    raw = np.concatenate([rng.normal(size=95), rng.normal(0, 40, size=5)])
    ds = TabularDataset(features=raw[:, None].astype(object),
                        labels=np.zeros(100, dtype=np.int64), n_classes=1,
                        feature_kinds=["numeric"], column_names=["a"])
    once = preprocess(ds)
    twice = preprocess(once)
    assert np.abs(twice.features - once.features).max() <= 1e-12


def test_all_missing_column():
    ds = TabularDataset(
        features=np.array([[None], [None]], dtype=object),
        labels=np.zeros(2, dtype=np.int64), n_classes=1,
        feature_kinds=["numeric"], column_names=["a"])
    with pytest.raises(AllMissingColumn):
        preprocess(ds)


def test_empty_dataset():
    ds = TabularDataset(features=np.empty((0, 2), dtype=object),
                        labels=np.empty(0, dtype=np.int64), n_classes=0,
                        feature_kinds=["numeric"] * 2, column_names=["a", "b"])
    with pytest.raises(EmptyDataset):
        preprocess(ds)


def test_train_statistics_do_not_leak():
    rng = np.random.default_rng(2)
    raw = rng.normal(size=(50, 2))
    train_idx = np.arange(40)
    ds = TabularDataset(features=raw.astype(object),
                        labels=np.zeros(50, dtype=np.int64), n_classes=1,
                        feature_kinds=["numeric"] * 2,
                        column_names=["a", "b"])
    base = preprocess(ds, train_indices=train_idx)
    mutated = raw.copy()
    mutated[45] += 1000.0  # test row only
    ds2 = TabularDataset(features=mutated.astype(object),
                         labels=np.zeros(50, dtype=np.int64), n_classes=1,
                         feature_kinds=["numeric"] * 2,
                         column_names=["a", "b"])
    out2 = preprocess(ds2, train_indices=train_idx)
    np.testing.assert_allclose(out2.features[train_idx],
                               base.features[train_idx], atol=1e-12)


def make_labelled(n, labels):
    rng = np.random.default_rng(9)
    return TabularDataset(features=rng.normal(size=(n, 2)),
                          labels=np.asarray(labels, dtype=np.int64),
                          n_classes=int(max(labels)) + 1,
                          feature_kinds=["numeric"] * 2,
                          column_names=["a", "b"], preprocessed=True)


def test_kfold_each_test_row_once():
    ds = make_labelled(10, [0] * 10)
    splits = kfold_split(ds, folds=10, dev_fraction=0.1, seed=0)
    test_sets = [s.test_indices for s in splits]
    assert all(len(t) == 1 for t in test_sets)
    assert sorted(np.concatenate(test_sets).tolist()) == list(range(10))


def test_kfold_partition_property():
    ds = make_labelled(57, [i % 3 for i in range(57)])
    for s in kfold_split(ds, folds=10, seed=4):
        union = np.concatenate([s.train_indices, s.test_indices])
        assert sorted(union.tolist()) == list(range(57))
        assert not set(s.train_indices) & set(s.test_indices)


def test_kfold_stratification():
    ds = make_labelled(100, [0] * 50 + [1] * 50)
    splits = kfold_split(ds, folds=10, seed=1)
    assert all(s.stratified for s in splits)
    for s in splits:
        labs = ds.labels[s.test_indices]
        assert (labs == 0).sum() == 5
        assert (labs == 1).sum() == 5


def test_kfold_unstratified_flag_when_rare_class():
    ds = make_labelled(40, [0] * 37 + [1] * 3)
    splits = kfold_split(ds, folds=10, seed=1)
    assert not any(s.stratified for s in splits)


def test_kfold_determinism_and_seed_sensitivity():
    ds = make_labelled(60, [i % 2 for i in range(60)])
    a = kfold_split(ds, folds=10, seed=7)
    b = kfold_split(ds, folds=10, seed=7)
    for sa, sb in zip(a, b):
        assert np.array_equal(sa.test_indices, sb.test_indices)
    distinct = {
        tuple(kfold_split(ds, folds=10, seed=s)[0].test_indices.tolist())
        for s in range(20)
    }
    assert len(distinct) > 1


def test_kfold_too_few_rows():
    ds = make_labelled(5, [0] * 5)
    with pytest.raises(TooFewRows):
        kfold_split(ds, folds=10)


def test_take_rows():
    ds = make_labelled(10, [i % 2 for i in range(10)])
    sub = take_rows(ds, np.array([1, 3, 5]))
    assert sub.n_rows == 3
    assert sub.labels.tolist() == [1, 1, 1]


def test_take_columns():
    from mixturepfn.data import take_columns
    ds = make_labelled(6, [0] * 6)
    sub = take_columns(ds, ["b"])
    assert sub.column_names == ["b"]
    np.testing.assert_array_equal(sub.features[:, 0], ds.features[:, 1])
    with pytest.raises(ValueError):
        take_columns(ds, ["nope"])


def test_variance_cap_projection_consistency():
    # a test file whose own variances would keep different columns must
    # still be projected onto the train file's kept columns
    from mixturepfn.data import select_features_by_variance, take_columns
    rng = np.random.default_rng(3)
    train = TabularDataset(
        features=(rng.normal(size=(50, 4)) * [10, 1, 5, 0.1]).astype(object),
        labels=np.zeros(50, dtype=np.int64), n_classes=1,
        feature_kinds=["numeric"] * 4, column_names=list("abcd"))
    test = TabularDataset(
        features=(rng.normal(size=(20, 4)) * [0.1, 5, 1, 10]).astype(object),
        labels=np.zeros(20, dtype=np.int64), n_classes=1,
        feature_kinds=["numeric"] * 4, column_names=list("abcd"))
    capped = select_features_by_variance(train, 2)
    assert capped.column_names == ["a", "c"]
    projected = take_columns(test, capped.column_names)
    assert projected.column_names == capped.column_names
