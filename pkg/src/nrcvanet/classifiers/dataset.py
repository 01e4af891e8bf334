"""Encoded tabular data for the learners.

Rows are stored as a float matrix: nominal values as their index in the
attribute's value list, continuous values as-is, NaN for missing. Labels are
indices into ``classes``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..features import CLASSES, FEATURE_NAMES, NOMINAL_VALUES, FeatureVector, format_dataset_rows, parse_dataset_rows

NOMINAL = "nominal"
CONTINUOUS = "continuous"


@dataclass(frozen=True)
class Attribute:
    name: str
    kind: str
    values: tuple[str, ...] = ()

    @property
    def nominal(self) -> bool:
        return self.kind == NOMINAL

    def encode(self, v: object) -> float:
        if v is None or v == "":
            return np.nan
        if self.nominal:
            try:
                return float(self.values.index(str(v)))
            except ValueError:
                raise ValueError(f"{self.name}: unknown value {v!r}") from None
        x = float(v)
        if not np.isfinite(x):
            raise ValueError(f"{self.name}: non-finite value {v!r}")
        return x

    def decode(self, x: float) -> object:
        if np.isnan(x):
            return None
        return self.values[int(x)] if self.nominal else float(x)


def feature_schema() -> list[Attribute]:
    out = []
    for name in FEATURE_NAMES:
        if name in NOMINAL_VALUES:
            out.append(Attribute(name, NOMINAL, NOMINAL_VALUES[name]))
        else:
            out.append(Attribute(name, CONTINUOUS))
    return out


@dataclass
class Dataset:
    attributes: list[Attribute]
    X: np.ndarray
    y: np.ndarray
    classes: tuple[str, ...] = CLASSES
    weights: np.ndarray | None = None
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X, dtype=float).reshape(len(self.y), len(self.attributes))
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.weights is None:
            self.weights = np.ones(len(self.y))
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.weights) != len(self.y):
            raise ValueError("weights and labels differ in length")
        if np.any(self.weights < 0):
            raise ValueError("row weights must be nonnegative")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= len(self.classes)):
            raise ValueError("label index out of range")
        for j, a in enumerate(self.attributes):
            col = self.X[:, j]
            known = col[~np.isnan(col)]
            if a.nominal and len(known):
                if np.any(known != np.floor(known)) or known.min() < 0 or known.max() >= len(a.values):
                    raise ValueError(f"{a.name}: nominal codes out of range")
            elif np.any(np.isinf(known)):
                raise ValueError(f"{a.name}: non-finite value")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    def index_of(self, name: str) -> int:
        return self.names.index(name)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=len(self.classes))

    def subset(self, rows: Sequence[int] | np.ndarray) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(list(self.attributes), self.X[rows], self.y[rows], self.classes, self.weights[rows])

    def without(self, name: str) -> "Dataset":
        j = self.index_of(name)
        keep = [k for k in range(len(self.attributes)) if k != j]
        return Dataset([self.attributes[k] for k in keep], self.X[:, keep], self.y, self.classes, self.weights)

    def with_weights(self, w: np.ndarray) -> "Dataset":
        return Dataset(list(self.attributes), self.X, self.y, self.classes, np.asarray(w, dtype=float))

    def encode_row(self, row: Mapping[str, object]) -> np.ndarray:
        x = np.array([a.encode(row.get(a.name)) for a in self.attributes])
        if np.all(np.isnan(x)):
            raise ValueError("row has every feature missing")
        return x

    @classmethod
    def from_rows(
        cls,
        rows: Iterable[Mapping[str, object]],
        labels: Iterable[str],
        attributes: list[Attribute] | None = None,
        classes: tuple[str, ...] = CLASSES,
    ) -> "Dataset":
        attributes = attributes or feature_schema()
        rows = list(rows)
        labels = list(labels)
        X = np.array([[a.encode(r.get(a.name)) for a in attributes] for r in rows], dtype=float)
        y = np.array([classes.index(l) for l in labels], dtype=np.int64)
        return cls(attributes, X.reshape(len(rows), len(attributes)), y, classes)

    @classmethod
    def from_feature_rows(cls, rows: Iterable[tuple[FeatureVector, str]]) -> "Dataset":
        rows = list(rows)
        return cls.from_rows([fv.as_row() for fv, _ in rows], [l for _, l in rows])

    def to_feature_rows(self) -> list[tuple[FeatureVector, str]]:
        if self.names != list(FEATURE_NAMES):
            raise ValueError("only the full feature schema maps back to feature vectors")
        out = []
        for x, y in zip(self.X, self.y):
            d = {a.name: a.decode(v) for a, v in zip(self.attributes, x)}
            out.append((FeatureVector.from_row(d), self.classes[y]))
        return out


def load_dataset(path: str | Path) -> Dataset:
    return Dataset.from_feature_rows(parse_dataset_rows(Path(path).read_text()))


def save_dataset(ds: Dataset, path: str | Path) -> None:
    Path(path).write_text(format_dataset_rows(ds.to_feature_rows()))
