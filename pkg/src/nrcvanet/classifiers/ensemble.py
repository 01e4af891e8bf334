"""Random forest and AdaBoost.M1 over C4.5 trees."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dataset import Dataset
from .tree import TreeModel, train_c45


def _vote(counts: np.ndarray) -> int:
    return int(np.argmax(counts))


@dataclass
class ForestModel:
    trees: list[TreeModel]
    tree_seeds: list[int]
    attributes: list
    classes: tuple[str, ...]
    m_features: int

    def votes(self, x: np.ndarray) -> np.ndarray:
        v = np.zeros(len(self.classes))
        for t in self.trees:
            v[t.predict_index(x)] += 1
        return v

    def predict_index(self, x: np.ndarray) -> int:
        return _vote(self.votes(x))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.array([self.predict_index(x) for x in np.atleast_2d(X)], dtype=np.int64)

    def predict_row(self, row: dict) -> str:
        x = np.array([a.encode(row.get(a.name)) for a in self.attributes])
        if np.all(np.isnan(x)):
            raise ValueError("row has every feature missing")
        return self.classes[self.predict_index(x)]


def train_random_forest(
    ds: Dataset,
    n_trees: int = 100,
    m_features: int = 4,
    seed: int = 0,
    bootstrap: bool = True,
) -> ForestModel:
    """Bagged unpruned trees, each split choosing among ``m_features`` random attributes."""
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    if not 1 <= m_features <= len(ds.attributes):
        raise ValueError(f"m_features must be in [1, {len(ds.attributes)}]")
    children = np.random.SeedSequence(seed).spawn(n_trees)
    trees, seeds = [], []
    n = len(ds)
    for ss in children:
        rng = np.random.default_rng(ss)
        rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        t = train_c45(ds.subset(rows), min_leaf=1, prune_cf=None, m_features=m_features, rng=rng)
        trees.append(t)
        seeds.append(int(ss.generate_state(1)[0]))
    return ForestModel(trees, seeds, list(ds.attributes), tuple(ds.classes), m_features)


@dataclass
class BoostRound:
    model: TreeModel
    error: float
    alpha: float
    weights: np.ndarray  # normalized instance weights the round was trained on


@dataclass
class BoostModel:
    rounds: list[BoostRound]
    attributes: list
    classes: tuple[str, ...]

    @property
    def alphas(self) -> list[float]:
        return [r.alpha for r in self.rounds]

    def scores(self, x: np.ndarray) -> np.ndarray:
        s = np.zeros(len(self.classes))
        for r in self.rounds:
            s[r.model.predict_index(x)] += r.alpha
        return s

    def predict_index(self, x: np.ndarray) -> int:
        return _vote(self.scores(x))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.array([self.predict_index(x) for x in np.atleast_2d(X)], dtype=np.int64)

    def predict_row(self, row: dict) -> str:
        x = np.array([a.encode(row.get(a.name)) for a in self.attributes])
        if np.all(np.isnan(x)):
            raise ValueError("row has every feature missing")
        return self.classes[self.predict_index(x)]


def train_adaboost_m1(
    ds: Dataset,
    T: int = 10,
    base: Callable[[Dataset], TreeModel] | None = None,
) -> BoostModel:
    """AdaBoost.M1 by reweighting.

    Each round trains on weights normalized to sum to the row count (so
    ``min_leaf`` keeps its meaning), records the weights normalized to 1,
    and stops when the weighted error is 0 or at least 0.5. A first round
    that stops is kept with weight 1 so the ensemble is never empty.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    base = base or train_c45
    n = len(ds)
    w = ds.weights / ds.weights.sum()
    rounds: list[BoostRound] = []
    for _ in range(T):
        model = base(ds.with_weights(w * n))
        wrong = model.predict(ds.X) != ds.y
        eps = float(w[wrong].sum())
        if eps == 0.0 or eps >= 0.5:
            if not rounds:
                rounds.append(BoostRound(model, eps, 1.0, w.copy()))
            break
        beta = eps / (1.0 - eps)
        alpha = math.log(1.0 / beta)
        rounds.append(BoostRound(model, eps, alpha, w.copy()))
        w = w.copy()
        w[wrong] /= beta
        w /= w.sum()
    return BoostModel(rounds, list(ds.attributes), tuple(ds.classes))


def model_digest(model) -> str:
    """Stable hash of a model's serialized form."""
    from .serialization import dumps_model

    return hashlib.sha256(dumps_model(model).encode()).hexdigest()
