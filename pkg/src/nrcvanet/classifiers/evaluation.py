"""Cross-validation and leave-one-feature-out sensitivity analysis."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .dataset import Dataset

Trainer = Callable[[Dataset], object]


@dataclass
class CVResult:
    accuracy: float
    confusion: np.ndarray  # rows: true class, columns: predicted
    folds: np.ndarray  # fold index per row
    predictions: np.ndarray
    stratified: bool = True
    warnings: list[str] = field(default_factory=list)
    truth: np.ndarray | None = None

    @property
    def fold_accuracies(self) -> list[float]:
        out = []
        for f in np.unique(self.folds):
            m = self.folds == f
            out.append(float(np.mean(self.predictions[m] == self.truth[m])))
        return out


def fold_assignment(y: np.ndarray, folds: int, seed: int, n_classes: int) -> tuple[np.ndarray, bool, list[str]]:
    """Stratified folds: rows of each class are shuffled and dealt round-robin.

    The deal continues across classes so fold sizes differ by at most one.
    Falls back to a plain shuffled deal when some class has fewer rows than
    folds.
    """
    n = len(y)
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if n < folds:
        raise ValueError("need at least as many rows as folds")
    rng = np.random.default_rng(seed)
    counts = np.bincount(y, minlength=n_classes)
    present = counts[counts > 0]
    out = np.empty(n, dtype=np.int64)
    if present.min() < folds:
        perm = rng.permutation(n)
        out[perm] = np.arange(n) % folds
        return out, False, [f"a class has fewer than {folds} rows; folds are not stratified"]
    k = 0
    for c in range(n_classes):
        rows = np.flatnonzero(y == c)
        rows = rows[rng.permutation(len(rows))]
        out[rows] = (k + np.arange(len(rows))) % folds
        k += len(rows)
    return out, True, []


def cross_validate(trainer: Trainer, ds: Dataset, folds: int = 10, seed: int = 0) -> CVResult:
    f, strat, warns = fold_assignment(ds.y, folds, seed, len(ds.classes))
    pred = np.empty(len(ds), dtype=np.int64)
    for k in range(folds):
        test = np.flatnonzero(f == k)
        train = np.flatnonzero(f != k)
        model = trainer(ds.subset(train))
        pred[test] = model.predict(ds.X[test])
    kc = len(ds.classes)
    conf = np.zeros((kc, kc), dtype=np.int64)
    np.add.at(conf, (ds.y, pred), 1)
    acc = float(np.mean(pred == ds.y))
    return CVResult(acc, conf, f, pred, strat, warns, truth=ds.y.copy())


def sensitivity_analysis(
    ds: Dataset,
    trainers: Mapping[str, Trainer],
    folds: int = 10,
    seed: int = 0,
) -> dict[str, dict[str, float]]:
    """Accuracy change per removed feature, for each trainer.

    Returns ``{trainer: {"__full__": acc, feature: acc_without - acc_full}}``.
    """
    if len(ds.attributes) < 2:
        raise ValueError("need at least two features")
    out: dict[str, dict[str, float]] = {}
    for name, tr in trainers.items():
        full = cross_validate(tr, ds, folds, seed).accuracy
        row = {"__full__": full}
        for a in ds.names:
            row[a] = cross_validate(tr, ds.without(a), folds, seed).accuracy - full
        out[name] = row
    return out


class MajorityModel:
    """Predicts the weighted majority class; a reference trainer for baselines."""

    def __init__(self, ds: Dataset):
        self.label = int(np.argmax(np.bincount(ds.y, weights=ds.weights, minlength=len(ds.classes))))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.full(len(np.atleast_2d(X)), self.label, dtype=np.int64)
