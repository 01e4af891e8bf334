"""Naive Bayes with Laplace-smoothed nominal tables and Gaussian continuous features.

Scores are summed in log space. A missing value drops its factor from the
product. Ties go to the lowest class index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset

VAR_FLOOR = 1e-6


@dataclass
class NBModel:
    attributes: list
    classes: tuple[str, ...]
    alpha: float
    priors: np.ndarray
    tables: dict[int, np.ndarray]  # attribute -> (classes, values) conditionals
    means: dict[int, np.ndarray]
    variances: dict[int, np.ndarray]

    def log_scores(self, x: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            s = np.log(self.priors)
        for j, a in enumerate(self.attributes):
            v = x[j]
            if np.isnan(v):
                continue
            if a.nominal:
                s = s + np.log(self.tables[j][:, int(v)])
            else:
                mu, var = self.means[j], self.variances[j]
                s = s - 0.5 * np.log(2 * math.pi * var) - (v - mu) ** 2 / (2 * var)
        return s

    def posterior(self, x: np.ndarray) -> np.ndarray:
        s = self.log_scores(x)
        m = s.max()
        p = np.exp(s - m)
        return p / p.sum()

    def predict_index(self, x: np.ndarray) -> int:
        return int(np.argmax(self.log_scores(x)))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.array([self.predict_index(x) for x in np.atleast_2d(X)], dtype=np.int64)

    def predict_row(self, row: dict) -> str:
        return predict_nb(self, row)[0]


def train_nb(ds: Dataset, alpha: float = 1.0) -> NBModel:
    if not alpha > 0:
        raise ValueError("laplace alpha must be > 0")
    k = len(ds.classes)
    w = ds.weights
    cw = np.bincount(ds.y, weights=w, minlength=k)
    priors = (cw + alpha) / (cw.sum() + alpha * k)
    tables, means, variances = {}, {}, {}
    for j, a in enumerate(ds.attributes):
        col = ds.X[:, j]
        known = ~np.isnan(col)
        if a.nominal:
            nv = len(a.values)
            t = np.zeros((k, nv))
            np.add.at(t, (ds.y[known], col[known].astype(np.int64)), w[known])
            tables[j] = (t + alpha) / (t.sum(axis=1, keepdims=True) + alpha * nv)
        else:
            mu = np.zeros(k)
            var = np.full(k, VAR_FLOOR)
            for c in range(k):
                m = known & (ds.y == c)
                wc = w[m]
                if wc.sum() > 0:
                    mu[c] = np.average(col[m], weights=wc)
                    var[c] = max(float(np.average((col[m] - mu[c]) ** 2, weights=wc)), VAR_FLOOR)
            means[j], variances[j] = mu, var
    return NBModel(list(ds.attributes), tuple(ds.classes), float(alpha), priors, tables, means, variances)


def predict_nb(model: NBModel, row: dict) -> tuple[str, dict[str, float]]:
    """Label and normalized posterior for a row given as ``{feature name: value}``.

    A schema value never seen in training gets its smoothed probability;
    a value outside the schema raises ``ValueError``.
    """
    x = np.array([a.encode(row.get(a.name)) for a in model.attributes])
    if np.all(np.isnan(x)):
        raise ValueError("row has every feature missing")
    p = model.posterior(x)
    return model.classes[int(np.argmax(model.log_scores(x)))], dict(zip(model.classes, p.tolist()))
