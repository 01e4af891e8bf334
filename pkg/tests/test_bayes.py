import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from nrcvanet.classifiers import Dataset, predict_nb, train_nb
from nrcvanet.classifiers.dataset import CONTINUOUS, NOMINAL, Attribute


def _queries(rows):
    # every training row, plus one row with all but the first feature missing
    out = list(rows)
    first = next(f for f in oracles.FEATURES if rows[0][f] is not None)
    out.append({f: (rows[0][f] if f == first else None) for f in oracles.FEATURES})
    return out


@pytest.mark.parametrize("path", oracles.corpus_files(), ids=lambda p: p.stem)
def test_posterior_matches_exhaustive_counts(path):
    rows, labels = oracles.read_rows(path)
    model = train_nb(oracles.load_corpus_dataset(path))
    for q in _queries(rows):
        if all(v is None for v in q.values()):
            continue
        _, post = predict_nb(model, q)
        ref = oracles.nb_posterior(rows, labels, q)
        for c in oracles.CLASSES:
            assert post[c] == pytest.approx(ref[c], abs=1e-9)


def _mixed(n=40, seed=0):
    rng = np.random.default_rng(seed)
    attrs = [Attribute("speed", CONTINUOUS), Attribute("kind", NOMINAL, ("a", "b", "c"))]
    labels = ["Incident" if i % 2 else "Weather" for i in range(n)]
    rows = [{"speed": float(rng.normal(5 if lab == "Incident" else 12, 2)),
             "kind": "a" if lab == "Incident" else str(rng.choice(["b", "c"]))} for lab in labels]
    return Dataset.from_rows(rows, labels, attributes=attrs)


@settings(max_examples=40, deadline=None)
@given(st.floats(-50, 50), st.sampled_from(["a", "b", "c", None]))
def test_posterior_sums_to_one(speed, kind):
    model = train_nb(_mixed())
    _, post = predict_nb(model, {"speed": speed, "kind": kind})
    assert sum(post.values()) == pytest.approx(1.0)
    assert all(p >= 0 for p in post.values())


def test_continuous_scaling_does_not_change_prediction():
    ds = _mixed()
    scaled = Dataset(ds.attributes, ds.X * np.array([3.0, 1.0]), ds.y, ds.classes)
    m1, m2 = train_nb(ds), train_nb(scaled)
    for x in ds.X:
        assert m1.predict_index(x) == m2.predict_index(x * np.array([3.0, 1.0]))


def test_missing_value_drops_its_factor():
    ds = _mixed()
    only_kind = train_nb(ds.without("speed"))
    full = train_nb(ds)
    _, p_full = predict_nb(full, {"speed": None, "kind": "b"})
    _, p_kind = predict_nb(only_kind, {"kind": "b"})
    assert p_full == pytest.approx(p_kind)


def test_uninformative_feature_returns_prior():
    attrs = [Attribute("kind", NOMINAL, ("a", "b"))]
    labels = ["Incident"] * 6 + ["Weather"] * 2
    rows = [{"kind": "a"}, {"kind": "b"}] * 3 + [{"kind": "a"}, {"kind": "b"}]
    model = train_nb(Dataset.from_rows(rows, labels, attributes=attrs))
    _, post = predict_nb(model, {"kind": "a"})
    # Laplace prior over five classes; kind has likelihood 1/2 under every class
    assert post["Incident"] == pytest.approx(7 / 13)
    assert post["Weather"] == pytest.approx(3 / 13)
    assert post["Recurrent"] == pytest.approx(1 / 13)


def test_unseen_schema_value_is_smoothed_and_unknown_value_raises():
    model = train_nb(_mixed())
    _, post = predict_nb(model, {"speed": 5.0, "kind": "c"})
    assert post["Incident"] > 0
    with pytest.raises(ValueError):
        predict_nb(model, {"speed": 5.0, "kind": "zzz"})
    with pytest.raises(ValueError):
        predict_nb(model, {})


def test_alpha_must_be_positive():
    with pytest.raises(ValueError):
        train_nb(_mixed(), alpha=0)
