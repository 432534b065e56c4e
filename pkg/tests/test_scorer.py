import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import table_dataset
from trace2lr.ingest import MinuteSample
from trace2lr.scorer import (
    FAMILIES,
    ScorerConfig,
    ScorerError,
    TreeEnsembleModel,
    aggregate_importance,
    compute_class_weights,
    encode_ordered_categorical,
    fit_scorer,
    predict_classes,
    score,
    score_frame,
    variable_importance,
)

NUM = "noncumulative_numeric"
CAT = "categorical"


def _accuracy(model, data):
    return float(np.mean(predict_classes(model, data) == data.frame.labels))


# ---------------------------------------------------------------- class weights

def test_class_weights():
    w = compute_class_weights(["A"] * 75 + ["B"] * 25)
    assert w["A"] == pytest.approx(2 / 3) and w["B"] == pytest.approx(2.0)
    w = compute_class_weights(["A"] * 50 + ["B"] * 50)
    assert w["A"] == w["B"] == 1.0
    with pytest.raises(ScorerError):
        compute_class_weights(["A"] * 10, ["A", "B"])


@given(st.lists(st.sampled_from("abcd"), min_size=1, max_size=60))
def test_class_weights_mean_one(labels):
    w = compute_class_weights(labels)
    assert np.mean([w[x] for x in labels]) == pytest.approx(1.0)


# ---------------------------------------------------------------- ordered encoding

def test_encoding_first_occurrence_is_prior():
    out = encode_ordered_categorical(np.array(["x", "y"], object), [1, 0], [0, 1], prior=1.0, p0=0.5)
    assert np.allclose(out, 0.5)


def test_encoding_hand_case():
    out = encode_ordered_categorical(np.array(["x", "x"], object), [1, 0], [0, 1], prior=1.0, p0=0.5)
    assert out[1] == pytest.approx(0.75)


def test_encoding_distinct_tokens():
    col = np.array(list("abcdef"), object)
    y = np.array([1, 0, 1, 1, 0, 0])
    assert np.allclose(encode_ordered_categorical(col, y, np.arange(6)), y.mean())


def test_encoding_missing_is_own_token():
    col = np.array([None, None, "a"], object)
    out = encode_ordered_categorical(col, [1, 1, 0], [0, 1, 2], prior=1.0, p0=0.5)
    assert out[1] == pytest.approx(0.75) and out[2] == pytest.approx(0.5)


def test_encoding_length_mismatch():
    with pytest.raises(ValueError):
        encode_ordered_categorical(np.array(["a"], object), [1, 0], [0, 1])


def _reference_encoding(col, y, perm, prior, p0):
    out = np.empty(len(col))
    for pos, i in enumerate(perm):
        earlier = [j for j in perm[:pos] if col[j] == col[i]]
        out[i] = (sum(y[j] for j in earlier) + prior * p0) / (len(earlier) + prior)
    return out


@st.composite
def encoding_cases(draw):
    n = draw(st.integers(1, 15))
    col = draw(st.lists(st.sampled_from(["a", "b", "c", None]), min_size=n, max_size=n))
    y = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    perm = draw(st.permutations(range(n)))
    return np.array(col, object), np.array(y, float), np.array(perm)


@given(encoding_cases())
def test_encoding_matches_reference(case):
    col, y, perm = case
    got = encode_ordered_categorical(col, y, perm, prior=1.0, p0=0.3)
    assert np.allclose(got, _reference_encoding(col, y, perm, 1.0, 0.3), atol=1e-12)


@given(encoding_cases(), st.data())
def test_encoding_is_causal(case, data):
    col, y, perm = case
    n = len(col)
    cut = data.draw(st.integers(0, n - 1))
    later = perm[cut + 1:]
    col2, y2 = col.copy(), y.copy()
    for i in later:
        col2[i] = data.draw(st.sampled_from(["a", "b", "c", None]))
        y2[i] = 1 - y2[i]
    a = encode_ordered_categorical(col, y, perm, p0=0.5)
    b = encode_ordered_categorical(col2, y2, perm, p0=0.5)
    head = perm[:cut + 1]
    assert np.array_equal(a[head], b[head])


# ---------------------------------------------------------------- fitting

def _separable(n=40, seed=0):
    r = np.random.default_rng(seed)
    x = r.uniform(-1, 1, n)
    return table_dataset({"x": (NUM, list(x))}, ["A" if v < 0 else "B" for v in x])


@pytest.mark.parametrize("family", FAMILIES)
def test_separable_training_accuracy(family):
    data = _separable()
    cfg = ScorerConfig.for_family(family, rounds=10 if family != "single_tree" else 1, min_samples_leaf=1)
    model = fit_scorer(data, ["A", "B"], cfg, n_jobs=1)
    assert _accuracy(model, data) == 1.0


def test_missingness_alone_separates():
    r = np.random.default_rng(1)
    labels = ["A"] * 30 + ["B"] * 30
    x = [float(v) for v in r.normal(size=30)] + [None] * 30
    noise = [float(v) for v in r.normal(size=60)]
    data = table_dataset({"x": (NUM, x), "noise": (NUM, noise)}, labels)
    model = fit_scorer(data, ["A", "B"], ScorerConfig(rounds=10), n_jobs=1)
    x_test = [float(v) for v in r.normal(size=20)] + [None] * 20
    test = table_dataset({"x": (NUM, x_test), "noise": (NUM, [float(v) for v in r.normal(size=40)])},
                         ["A"] * 20 + ["B"] * 20)
    assert _accuracy(model, test) == 1.0


def test_uninformative_features():
    labels = ["A"] * 30 + ["B"] * 10
    data = table_dataset({"x": (NUM, [1.0] * 40), "c": (CAT, ["k"] * 40)}, labels)
    model = fit_scorer(data, ["A", "B"], ScorerConfig(rounds=20), n_jobs=1)
    raw = score_frame(model, data)
    assert np.allclose(raw, raw[0])
    assert _accuracy(model, data) == pytest.approx(0.75)


def test_fit_errors():
    data = _separable()
    with pytest.raises(ScorerError):
        fit_scorer(data, ["A"], ScorerConfig(rounds=2))
    with pytest.raises(ScorerError):
        fit_scorer(data, ["C", "D"], ScorerConfig(rounds=2))
    with pytest.raises(ScorerError):
        ScorerConfig(rounds=0)
    with pytest.raises(ScorerError):
        ScorerConfig(family="forest")


def test_boosting_loss_non_increasing(small_dataset):
    model = fit_scorer(small_dataset, ["walking", "running", "sitting", "car"], ScorerConfig(rounds=40), n_jobs=1)
    loss = np.array(model.train_loss)
    assert len(loss) == 41
    assert np.all(np.diff(loss) <= 1e-12)


def test_binary_boosting_loss_non_increasing(small_dataset):
    model = fit_scorer(small_dataset, ["walking", "sitting"], ScorerConfig(rounds=40, learning_rate=1.0), n_jobs=1)
    assert np.all(np.diff(model.train_loss) <= 1e-12)


@pytest.mark.parametrize("family", FAMILIES)
def test_determinism_and_worker_independence(small_dataset, family):
    classes = ["walking", "running", "sitting", "car"]
    cfg = ScorerConfig.for_family(family, rounds=8 if family != "single_tree" else 1, seed=7)
    a = fit_scorer(small_dataset, classes, cfg, n_jobs=1)
    b = fit_scorer(small_dataset, classes, cfg, n_jobs=3)
    assert json.dumps(a.to_json()) == json.dumps(b.to_json())
    assert np.array_equal(score_frame(a, small_dataset), score_frame(b, small_dataset))


@pytest.mark.parametrize("family", FAMILIES)
def test_json_roundtrip(small_dataset, family):
    classes = ["walking", "running", "sitting"]
    model = fit_scorer(small_dataset, classes, ScorerConfig.for_family(family, rounds=5 if family != "single_tree" else 1))
    back = TreeEnsembleModel.from_json(json.loads(json.dumps(model.to_json())))
    assert np.array_equal(score_frame(back, small_dataset), score_frame(model, small_dataset))


def test_score_shape_and_missing_totality(small_dataset):
    model = fit_scorer(small_dataset, ["walking", "sitting"], ScorerConfig(rounds=10))
    sample = small_dataset.samples[0]
    assert score(model, sample).shape == (2,)
    empty = dataclasses.replace(sample, features=dict.fromkeys(sample.features))
    assert np.all(np.isfinite(score(model, empty)))
    odd = dict(sample.features)
    for name, kind in model.encoder.variables:
        if kind == CAT:
            odd[name] = "never-seen-token"
    assert np.all(np.isfinite(score(model, dataclasses.replace(sample, features=odd))))


@given(st.data())
def test_score_total_over_missing_patterns(small_scorer, data):
    model, sample = small_scorer
    feats = {k: (None if data.draw(st.booleans()) else v) for k, v in sample.features.items()}
    out = score(model, MinuteSample(sample.minute, feats, sample.label, 60.0, sample.provenance))
    assert out.shape == (len(model.class_order),) and np.all(np.isfinite(out))


@pytest.fixture(scope="module")
def small_scorer():
    from trace2lr.synthetic import make_dataset
    ds = make_dataset(n_subjects=3, seed=2)
    model = fit_scorer(ds, ["walking", "running", "sitting", "car"], ScorerConfig(rounds=10))
    return model, ds.samples[0]


def test_memorised_leaf_region():
    data = table_dataset({"x": (NUM, [0.0] * 6 + [10.0] * 6)}, ["A"] * 6 + ["B"] * 6)
    model = fit_scorer(data, ["A", "B"], ScorerConfig(rounds=5, min_samples_leaf=1))
    assert predict_classes(model, data).tolist() == ["A"] * 6 + ["B"] * 6


def test_leaf_shift_moves_one_class(small_scorer, small_dataset):
    model, _ = small_scorer
    k, c = 2, 0.37
    trees = [dataclasses.replace(t, value=t.value + c * (t.outputs == k)) if k in t.outputs else t
             for t in model.trees]
    n_shifted = sum(k in t.outputs for t in model.trees)
    shifted = dataclasses.replace(model, trees=trees)
    a, b = score_frame(model, small_dataset), score_frame(shifted, small_dataset)
    delta = b - a
    assert np.allclose(delta[:, k], c * n_shifted)
    assert np.allclose(np.delete(delta, k, axis=1), 0.0)


# ---------------------------------------------------------------- importance

def _one_signal(dup=False, seed=0):
    r = np.random.default_rng(seed)
    n = 120
    labels = ["A"] * (n // 2) + ["B"] * (n // 2)
    sig = np.r_[r.normal(-2, 0.5, n // 2), r.normal(2, 0.5, n // 2)]
    cols = {"v": (NUM, list(sig)), "noise1": (NUM, list(r.normal(size=n))),
            "never": (NUM, [1.0] * n)}
    if dup:
        cols["v2"] = (NUM, list(sig))
    return table_dataset(cols, labels)


def test_importance_single_informative_variable():
    data = _one_signal()
    model = fit_scorer(data, ["A", "B"], ScorerConfig(rounds=20, max_depth=1), n_jobs=1)
    rep = variable_importance(model, data)
    assert rep.values[("v", "A")] == 1.0
    assert rep.values[("never", "A")] == 0.0
    assert rep.values[("noise1", "A")] < 0.05
    assert rep.ordering[0] == "v"


def test_importance_duplicate_columns_share():
    from trace2lr.scorer import split_importance
    data = _one_signal()
    single = split_importance(fit_scorer(data, ["A", "B"], ScorerConfig(rounds=20, max_depth=1)))
    dup = _one_signal(dup=True)
    split = split_importance(fit_scorer(dup, ["A", "B"], ScorerConfig(rounds=20, max_depth=1)))
    assert split["v"] + split["v2"] == pytest.approx(single["v"], abs=0.02)


def test_aggregate_importance_normalised(small_dataset):
    reps = [variable_importance(fit_scorer(small_dataset, list(p), ScorerConfig(rounds=5)))
            for p in (("walking", "sitting"), ("walking", "car"), ("sitting", "car"))]
    agg = aggregate_importance(reps)
    m = agg.matrix()
    assert np.all(m >= 0) and np.allclose(m.max(axis=1), 1.0)
    assert sorted(agg.activities) == ["car", "sitting", "walking"]
