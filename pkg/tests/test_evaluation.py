import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nrcvanet.classifiers import Dataset, cross_validate, fold_assignment, sensitivity_analysis, train_c45, train_nb
from nrcvanet.classifiers.dataset import CONTINUOUS, NOMINAL, Attribute
from nrcvanet.classifiers.evaluation import MajorityModel


def _ds(n=60, seed=0):
    rng = np.random.default_rng(seed)
    labels = ["Incident"] * (n // 3) + ["Weather"] * (n - n // 3)
    rows = [{"x": float(rng.normal(0 if lab == "Incident" else 10, 1)),
             "noise": float(rng.normal()),
             "tag": "a" if lab == "Incident" else "b"} for lab in labels]
    attrs = [Attribute("x", CONTINUOUS), Attribute("noise", CONTINUOUS), Attribute("tag", NOMINAL, ("a", "b"))]
    return Dataset.from_rows(rows, labels, attributes=attrs)


def test_majority_trainer_scores_majority_share():
    ds = _ds()
    res = cross_validate(MajorityModel, ds, folds=10, seed=0)
    assert res.accuracy == pytest.approx(2 / 3)
    assert res.confusion.sum() == len(ds)


def test_separable_data_gives_perfect_accuracy():
    res = cross_validate(lambda d: train_c45(d), _ds(), folds=10, seed=1)
    assert res.accuracy == 1.0
    assert res.stratified and not res.warnings
    assert all(a == 1.0 for a in res.fold_accuracies)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=10, max_size=80), st.integers(2, 10), st.integers(0, 99))
def test_folds_partition_rows_with_balanced_sizes(y, folds, seed):
    y = np.array(y)
    if len(y) < folds:
        return
    f, strat, _ = fold_assignment(y, folds, seed, 5)
    sizes = np.bincount(f, minlength=folds)
    assert sizes.sum() == len(y)
    assert sizes.max() - sizes.min() <= 1
    if strat:
        for c in np.unique(y):
            per = np.bincount(f[y == c], minlength=folds)
            assert per.max() - per.min() <= 1


def test_small_class_falls_back_to_plain_folds_with_warning():
    y = np.array([0] * 20 + [1] * 3)
    f, strat, warns = fold_assignment(y, 10, 0, 5)
    assert not strat
    assert warns
    assert set(f.tolist()) == set(range(10))


def test_fold_assignment_rejects_bad_sizes():
    with pytest.raises(ValueError):
        fold_assignment(np.zeros(5, dtype=int), 10, 0, 5)
    with pytest.raises(ValueError):
        fold_assignment(np.zeros(5, dtype=int), 1, 0, 5)


def test_duplicate_feature_has_no_effect_and_label_feature_matters():
    base = _ds(seed=3)
    dup = Dataset(base.attributes + [Attribute("x2", CONTINUOUS)],
                  np.column_stack([base.X, base.X[:, 0]]), base.y, base.classes)
    sens = sensitivity_analysis(dup, {"NB": lambda d: train_nb(d)}, folds=5, seed=0)["NB"]
    assert abs(sens["x2"]) <= 0.05
    assert abs(sens["noise"]) <= 0.05
    # only the label-carrying features remain once noise is removed
    only = dup.without("noise").without("x").without("x2")
    assert cross_validate(lambda d: train_nb(d), only, 5, 0).accuracy == 1.0
    noisy = Dataset([Attribute("noise", CONTINUOUS), Attribute("tag", NOMINAL, ("a", "b"))],
                    base.X[:, 1:], base.y, base.classes)
    s2 = sensitivity_analysis(noisy, {"NB": lambda d: train_nb(d)}, folds=5, seed=0)["NB"]
    assert s2["tag"] < -0.2


def test_cv_is_deterministic_per_seed():
    ds = _ds(seed=4)
    a = cross_validate(lambda d: train_nb(d), ds, 10, 7)
    b = cross_validate(lambda d: train_nb(d), ds, 10, 7)
    assert np.array_equal(a.predictions, b.predictions)
    assert np.array_equal(a.folds, b.folds)
