import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obr.forest import ForestModel, ModelFormatError, Tree, _best_split, classify, train_forest
from obr.table import DEFAULT_TABLE
from obr.transcribe import FeatureVector, encode

LETTERS = "abcdefghijklmnopqrstuvwxyz"


def letter_rows(reps=10):
    rows, labels = [], []
    for ch in LETTERS:
        row = encode(FeatureVector.from_mask(DEFAULT_TABLE.mask(ch)))
        rows += [row] * reps
        labels += [ch] * reps
    return rows, labels


@pytest.fixture(scope="module")
def letter_model():
    rows, labels = letter_rows()
    return train_forest(rows, labels, n_trees=50, max_depth=8, seed=42)


def test_letters_fit_exactly(letter_model):
    rows, labels = letter_rows(1)
    assert [lab for lab, _ in letter_model.predict(rows)] == labels


def test_confidence_is_vote_fraction(letter_model):
    rows, _ = letter_rows(1)
    votes = letter_model.votes(rows)
    assert (votes.sum(axis=1) == 50).all()
    for (lab, conf), v in zip(letter_model.predict(rows), votes):
        assert conf == v.max() / 50


def test_same_seed_same_bytes():
    rows, labels = letter_rows(3)
    a = train_forest(rows, labels, n_trees=10, seed=5).to_json()
    b = train_forest(rows, labels, n_trees=10, seed=5).to_json()
    assert a == b


def test_other_seed_other_trees_same_answers():
    rows, labels = letter_rows(10)
    a = train_forest(rows, labels, n_trees=50, seed=1)
    b = train_forest(rows, labels, n_trees=50, seed=2)
    assert a.to_json() != b.to_json()
    clean, _ = letter_rows(1)
    assert [p for p, _ in a.predict(clean)] == [p for p, _ in b.predict(clean)]


def test_json_round_trip(letter_model):
    s = letter_model.to_json()
    back = ForestModel.from_json(s)
    assert back.to_json() == s
    X = np.random.default_rng(0).integers(0, 2, size=(40, 7))
    assert back.predict(X) == letter_model.predict(X)


def test_single_class_warns(caplog):
    with caplog.at_level(logging.WARNING):
        m = train_forest([[3, 1, 0, 1, 0, 1, 0]] * 4, ["l"] * 4, n_trees=5)
    assert "single-class" in caplog.text
    assert classify(m, [1, 0, 0, 0, 0, 0, 1]) == ("l", 1.0)


def test_tie_goes_to_smallest_label():
    def stump(lab):
        return Tree(np.array([-1]), np.zeros(1), np.array([-1]), np.array([-1]), np.array([lab]))

    m = ForestModel([stump(1), stump(0)], ["a", "b"], 0, 1, 3)
    assert m.predict([[0] * 7]) == [("a", 0.5)]


@pytest.mark.parametrize("mutate, msg", [
    (lambda d: d.update(version=99), "version"),
    (lambda d: d["trees"][0]["nodes"][0].update(feat=9), "feature"),
    (lambda d: d.update(n_trees=7), "n_trees"),
])
def test_bad_model_rejected(letter_model, mutate, msg):
    doc = json.loads(letter_model.to_json())
    mutate(doc)
    with pytest.raises(ModelFormatError, match=msg):
        ForestModel.from_json(json.dumps(doc))


def test_not_json_rejected():
    with pytest.raises(ModelFormatError):
        ForestModel.from_json("{not json")


def test_input_errors():
    with pytest.raises(ValueError):
        train_forest([], [])
    with pytest.raises(ValueError):
        train_forest([[0] * 7], ["a", "b"])


def test_oob_accuracy_recorded(letter_model):
    assert letter_model.meta["oob_accuracy"] == 1.0
    assert letter_model.meta["n_rows"] == 260
    assert letter_model.meta["class_counts"]["q"] == 10


def test_depth_limit_respected():
    rows, labels = letter_rows(2)
    m = train_forest(rows, labels, n_trees=5, max_depth=2, seed=0)
    for t in m.trees:
        depth = {0: 0}
        for k in range(len(t.feat)):
            if t.feat[k] >= 0:
                depth[t.left[k]] = depth[t.right[k]] = depth[k] + 1
        assert max(depth.values()) <= 2


def walk(tree, x):
    k = 0
    while tree.feat[k] >= 0:
        k = tree.left[k] if x[tree.feat[k]] <= tree.thresh[k] else tree.right[k]
    return tree.label[k]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 6))
def test_apply_matches_node_walk(seed, depth):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 3, size=(60, 7)).astype(float)
    y = [str(v) for v in rng.integers(0, 4, size=60)]
    m = train_forest(X, y, n_trees=3, max_depth=depth, seed=seed)
    Q = rng.integers(0, 3, size=(25, 7)).astype(float)
    for t in m.trees:
        assert list(t.apply(Q)) == [walk(t, q) for q in Q]


def gini(y):
    if len(y) == 0:
        return 0.0
    p = np.bincount(y) / len(y)
    return 1 - (p * p).sum()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_best_split_matches_exhaustive_search(seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 4, size=(30, 7)).astype(float)
    y = rng.integers(0, 3, size=30)
    got = _best_split(X, y, 3, range(7))
    best = 0.0
    for f in range(7):
        vals = np.unique(X[:, f])
        for t in (vals[:-1] + vals[1:]) / 2:
            m = X[:, f] <= t
            child = (m.sum() * gini(y[m]) + (~m).sum() * gini(y[~m])) / len(y)
            best = max(best, gini(y) - child)
    if got is None:
        assert all(np.unique(X[:, f]).size < 2 for f in range(7))
    else:
        assert got[0] == pytest.approx(best, abs=1e-12)
