import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from nrcvanet.classifiers import Dataset, model_digest, train_adaboost_m1, train_c45, train_random_forest
from nrcvanet.classifiers.dataset import CONTINUOUS, Attribute


@pytest.mark.parametrize("path", oracles.corpus_files(), ids=lambda p: p.stem)
def test_adaboost_errors_and_alphas_match_reference(path):
    rows, labels = oracles.read_rows(path)
    ds = oracles.load_corpus_dataset(path)
    model = train_adaboost_m1(ds, T=10)
    preds = [[ds.classes[i] for i in r.model.predict(ds.X)] for r in model.rounds]
    ref = oracles.adaboost_trace(preds, labels)
    assert len(ref) == len(model.rounds)
    for r, (w, e, a) in zip(model.rounds, ref):
        assert r.error == pytest.approx(e, abs=1e-12)
        assert r.alpha == pytest.approx(a, abs=1e-12)
        assert np.allclose(r.weights, w, atol=1e-12)


class _Fixed:
    """A stand-in base learner that returns pre-set predictions per round."""

    def __init__(self, per_round, classes):
        self.per_round = list(per_round)
        self.classes = classes

    def __call__(self, ds):
        preds = np.asarray(self.per_round.pop(0))
        return _Const(preds)


class _Const:
    def __init__(self, preds):
        self.preds = preds

    def predict(self, X):
        return self.preds[: len(np.atleast_2d(X))]

    def predict_index(self, x):
        return int(self.preds[0])


def _ten_rows():
    ds = Dataset.from_rows([{"x": float(i)} for i in range(10)], ["Incident"] * 10,
                           attributes=[Attribute("x", CONTINUOUS)])
    return ds


def test_alpha_is_log_nine_at_ten_percent_error():
    ds = _ten_rows()
    one_wrong = np.full(10, ds.y[0])
    one_wrong[3] = 0 if ds.y[0] != 0 else 2
    base = _Fixed([one_wrong, np.full(10, ds.y[0])], ds.classes)
    m = train_adaboost_m1(ds, T=2, base=base)
    assert m.rounds[0].error == pytest.approx(0.1)
    assert m.rounds[0].alpha == pytest.approx(math.log(9))
    assert len(m.rounds) == 1


def test_perfect_first_round_gives_single_model():
    ds = _ten_rows()
    m = train_adaboost_m1(ds, T=10)
    assert len(m.rounds) == 1
    assert m.rounds[0].error == 0.0


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 10, allow_nan=False), st.sampled_from(["Recurrent", "Incident", "Weather"])),
                min_size=6, max_size=30))
def test_round_weights_are_a_distribution(pairs):
    ds = Dataset.from_rows([{"x": p[0]} for p in pairs], [p[1] for p in pairs],
                           attributes=[Attribute("x", CONTINUOUS)])
    m = train_adaboost_m1(ds, T=5)
    for r in m.rounds:
        assert np.all(r.weights > 0)
        assert r.weights.sum() == pytest.approx(1.0)
        assert r.error < 0.5 or len(m.rounds) == 1


def test_single_tree_forest_equals_unpruned_tree():
    path = oracles.CORPUS / "fixture_slice_a.csv"
    ds = oracles.load_corpus_dataset(path)
    f = train_random_forest(ds, n_trees=1, m_features=8, seed=3, bootstrap=False)
    t = train_c45(ds, min_leaf=1, prune_cf=None, m_features=8, rng=np.random.default_rng(np.random.SeedSequence(3).spawn(1)[0]))
    assert f.trees[0].describe() == t.describe()
    assert np.array_equal(f.predict(ds.X), t.predict(ds.X))


def test_forest_is_deterministic_per_seed():
    ds = oracles.load_corpus_dataset(oracles.CORPUS / "random_4.csv")
    a = train_random_forest(ds, n_trees=8, m_features=3, seed=5)
    b = train_random_forest(ds, n_trees=8, m_features=3, seed=5)
    assert model_digest(a) == model_digest(b)
    assert len(a.tree_seeds) == len(set(a.tree_seeds))


def test_forest_rejects_bad_arguments():
    ds = _ten_rows()
    with pytest.raises(ValueError):
        train_random_forest(ds, n_trees=0)
    with pytest.raises(ValueError):
        train_random_forest(ds, m_features=2)
    with pytest.raises(ValueError):
        train_adaboost_m1(ds, T=0)
