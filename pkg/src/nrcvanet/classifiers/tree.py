"""C4.5 decision trees.

Splits maximize the gain ratio. Nominal attributes branch once per value and
are not tested again below; continuous attributes split in two at the
midpoint with the highest information gain. Rows with a missing value go
down every branch with weights proportional to the branch sizes, both when
training and when predicting.

Pruning replaces a subtree by a leaf when the leaf's pessimistic error
estimate (upper confidence bound at ``prune_cf``) is no worse than the
subtree's. Subtree raising is not done.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .dataset import Dataset

EPS = 1e-12


def entropy(counts) -> float:
    """Shannon entropy in bits of (possibly weighted) class counts."""
    c = np.asarray(counts, dtype=float)
    tot = c.sum()
    if tot <= 0:
        return 0.0
    p = c[c > 0] / tot
    return float(-(p * np.log2(p)).sum())


def _split_stats(dist_total: np.ndarray, branch_dists: list[np.ndarray], missing_w: float) -> tuple[float, float]:
    """(gain, split information) of a partition of the known-valued rows."""
    known = sum(branch_dists)
    w_known = float(known.sum())
    total = w_known + missing_w
    if w_known <= 0 or total <= 0:
        return 0.0, 0.0
    cond = sum(float(b.sum()) / w_known * entropy(b) for b in branch_dists)
    gain = (w_known / total) * (entropy(known) - cond)
    parts = [float(b.sum()) for b in branch_dists] + [missing_w]
    si = 0.0
    for p in parts:
        if p > 0:
            q = p / total
            si -= q * math.log2(q)
    return gain, si


def gain_ratio(ds: Dataset, feature: int | str, split: float | None = None) -> float:
    """Gain ratio of splitting ``ds`` on ``feature``.

    Nominal features split by value. For continuous features ``split`` is the
    threshold (``x <= split`` goes left); with ``split=None`` the best-gain
    midpoint is used. Zero split information gives 0.
    """
    j = ds.index_of(feature) if isinstance(feature, str) else feature
    r = _evaluate(ds.X[:, j], ds.y, ds.weights, len(ds.classes), ds.attributes[j].nominal,
                  len(ds.attributes[j].values), min_leaf=0.0, threshold=split)
    if r is None:
        return 0.0
    gain, si, _ = r
    return gain / si if si > 0 else 0.0


def information_gain(ds: Dataset, feature: int | str, split: float | None = None) -> float:
    j = ds.index_of(feature) if isinstance(feature, str) else feature
    r = _evaluate(ds.X[:, j], ds.y, ds.weights, len(ds.classes), ds.attributes[j].nominal,
                  len(ds.attributes[j].values), min_leaf=0.0, threshold=split)
    return 0.0 if r is None else r[0]


def _evaluate(col, y, w, k, nominal, n_values, min_leaf, threshold=None):
    """(gain, split_info, threshold) for one attribute, or None if no valid split."""
    miss = np.isnan(col)
    missing_w = float(w[miss].sum())
    kc, ky, kw = col[~miss], y[~miss], w[~miss]
    if not len(kc):
        return None
    total = np.bincount(y, weights=w, minlength=k)
    if nominal:
        codes = kc.astype(np.int64)
        dists = [np.bincount(ky[codes == v], weights=kw[codes == v], minlength=k) for v in range(n_values)]
        sizes = [d.sum() for d in dists]
        if sum(s >= min_leaf and s > 0 for s in sizes) < 2:
            return None
        gain, si = _split_stats(total, dists, missing_w)
        return gain, si, math.nan
    order = np.argsort(kc, kind="stable")
    xs, ys, ws = kc[order], ky[order], kw[order]
    if threshold is not None:
        left = xs <= threshold
        dl = np.bincount(ys[left], weights=ws[left], minlength=k)
        dr = np.bincount(ys[~left], weights=ws[~left], minlength=k)
        if dl.sum() <= 0 or dr.sum() <= 0:
            return None
        gain, si = _split_stats(total, [dl, dr], missing_w)
        return gain, si, float(threshold)
    onehot = np.zeros((len(ys), k))
    onehot[np.arange(len(ys)), ys] = ws
    cum = np.cumsum(onehot, axis=0)
    known = cum[-1]
    # candidate cuts sit between distinct consecutive values
    cuts = np.flatnonzero(xs[1:] > xs[:-1])
    if not len(cuts):
        return None
    dl = cum[cuts]
    dr = known - dl
    wl, wr = dl.sum(axis=1), dr.sum(axis=1)
    ok = (wl >= min_leaf) & (wr >= min_leaf) & (wl > 0) & (wr > 0)
    if not ok.any():
        return None
    w_known = float(known.sum())
    gains = (w_known / (w_known + missing_w)) * (entropy(known) - (wl * _row_entropy(dl) + wr * _row_entropy(dr)) / w_known)
    gains = np.where(ok, gains, -np.inf)
    # first cut within EPS of the best gain
    i = int(np.flatnonzero(gains >= gains.max() - EPS)[0])
    gain, si = _split_stats(total, [dl[i], dr[i]], missing_w)
    return gain, si, float((xs[cuts[i]] + xs[cuts[i] + 1]) / 2.0)


def _row_entropy(d: np.ndarray) -> np.ndarray:
    tot = d.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(tot > 0, d / tot, 0.0)
        lp = np.where(p > 0, np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return -(p * lp).sum(axis=1)


@dataclass
class TreeNode:
    dist: np.ndarray
    label: int
    attr: int = -1
    threshold: float = math.nan
    children: list["TreeNode"] = field(default_factory=list)
    branch_p: np.ndarray | None = None

    @property
    def is_leaf(self) -> bool:
        return self.attr < 0

    @property
    def weight(self) -> float:
        return float(self.dist.sum())

    def leaves(self):
        if self.is_leaf:
            yield self
        else:
            for c in self.children:
                yield from c.leaves()


def _majority(dist: np.ndarray) -> int:
    # argmax returns the lowest index among ties
    return int(np.argmax(dist))


def add_errs(n: float, e: float, cf: float) -> float:
    """Extra errors of the upper ``cf`` confidence limit for ``e`` errors in ``n`` cases."""
    if cf <= 0 or cf >= 1:
        raise ValueError("confidence factor must be in (0, 1)")
    if n <= 0:
        return 0.0
    if e < 1:
        base = n * (1 - cf ** (1.0 / n))
        if e == 0:
            return base
        return base + e * (add_errs(n, 1.0, cf) - base)
    if e + 0.5 >= n:
        return max(n - e, 0.0)
    z = norm.ppf(1 - cf)
    f = (e + 0.5) / n
    r = (f + z * z / (2 * n) + z * math.sqrt(f / n - f * f / n + z * z / (4 * n * n))) / (1 + z * z / n)
    return r * n - e


@dataclass
class TreeModel:
    root: TreeNode
    attributes: list
    classes: tuple[str, ...]
    min_leaf: float = 2.0
    prune_cf: float | None = 0.25

    def predict_dist(self, x: np.ndarray) -> np.ndarray:
        return _descend(self.root, x, len(self.classes))

    def predict_index(self, x: np.ndarray) -> int:
        return _majority(self.predict_dist(x))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.array([self.predict_index(x) for x in np.atleast_2d(X)], dtype=np.int64)

    def predict_row(self, row: dict) -> str:
        x = np.array([a.encode(row.get(a.name)) for a in self.attributes])
        if np.all(np.isnan(x)):
            raise ValueError("row has every feature missing")
        return self.classes[self.predict_index(x)]

    @property
    def n_leaves(self) -> int:
        return sum(1 for _ in self.root.leaves())

    @property
    def depth(self) -> int:
        def d(n):
            return 0 if n.is_leaf else 1 + max(d(c) for c in n.children)

        return d(self.root)

    def root_feature(self) -> str | None:
        return None if self.root.is_leaf else self.attributes[self.root.attr].name

    def describe(self) -> str:
        lines: list[str] = []

        def walk(n: TreeNode, indent: str) -> None:
            if n.is_leaf:
                return
            a = self.attributes[n.attr]
            for b, c in enumerate(n.children):
                if a.nominal:
                    cond = f"{a.name} = {a.values[b]}"
                else:
                    cond = f"{a.name} {'<=' if b == 0 else '>'} {n.threshold:.4g}"
                if c.is_leaf:
                    lines.append(f"{indent}{cond}: {self.classes[c.label]} ({c.weight:.1f})")
                else:
                    lines.append(f"{indent}{cond}")
                    walk(c, indent + "|   ")

        if self.root.is_leaf:
            return f"{self.classes[self.root.label]} ({self.root.weight:.1f})"
        walk(self.root, "")
        return "\n".join(lines)


def _descend(node: TreeNode, x: np.ndarray, k: int) -> np.ndarray:
    if node.is_leaf:
        tot = node.dist.sum()
        if tot > 0:
            return node.dist / tot
        out = np.zeros(k)
        out[node.label] = 1.0
        return out
    v = x[node.attr]
    if np.isnan(v):
        return sum(p * _descend(c, x, k) for p, c in zip(node.branch_p, node.children))
    if node.threshold == node.threshold:  # continuous
        return _descend(node.children[0 if v <= node.threshold else 1], x, k)
    return _descend(node.children[int(v)], x, k)


class _Builder:
    def __init__(self, ds: Dataset, min_leaf: float, max_depth: int | None, m_features: int | None,
                 rng: np.random.Generator | None):
        self.attrs = ds.attributes
        self.k = len(ds.classes)
        self.min_leaf = min_leaf
        self.max_depth = max_depth
        self.m = m_features
        self.rng = rng

    def build(self, X, y, w, depth: int, used: frozenset, parent_label: int | None = None) -> TreeNode:
        dist = np.bincount(y, weights=w, minlength=self.k).astype(float)
        tot = dist.sum()
        if tot <= EPS:
            return TreeNode(dist, parent_label if parent_label is not None else 0)
        label = _majority(dist)
        leaf = TreeNode(dist, label)
        if dist.max() >= tot - EPS or tot < 2 * self.min_leaf:
            return leaf
        if self.max_depth is not None and depth >= self.max_depth:
            return leaf
        cand = [j for j in range(len(self.attrs)) if not (self.attrs[j].nominal and j in used)]
        if self.m is not None and self.m < len(cand):
            cand = sorted(self.rng.choice(cand, size=self.m, replace=False).tolist())
        best = None
        for j in cand:
            a = self.attrs[j]
            r = _evaluate(X[:, j], y, w, self.k, a.nominal, len(a.values), self.min_leaf)
            if r is None:
                continue
            gain, si, thr = r
            if gain <= EPS or si <= EPS:
                continue
            ratio = gain / si
            if best is None or ratio > best[0] + EPS:
                best = (ratio, j, thr)
        if best is None:
            return leaf
        _, j, thr = best
        a = self.attrs[j]
        col = X[:, j]
        miss = np.isnan(col)
        if a.nominal:
            masks = [(col == v) for v in range(len(a.values))]
        else:
            masks = [(col <= thr), (col > thr)]
        sizes = np.array([w[m].sum() for m in masks])
        known = sizes.sum()
        p = sizes / known
        children = []
        nused = used | {j} if a.nominal else used
        for b, m in enumerate(masks):
            rows = m | miss
            wb = np.where(miss, w * p[b], w)[rows]
            Xb, yb = X[rows], y[rows]
            keep = wb > 0
            children.append(self.build(Xb[keep], yb[keep], wb[keep], depth + 1, nused, label))
        return TreeNode(dist, label, j, thr, children, p)


def _prune(node: TreeNode, cf: float) -> float:
    """Prune bottom-up; returns the pessimistic error estimate of the result."""
    n = node.weight
    e = n - float(node.dist.max()) if n > 0 else 0.0
    as_leaf = e + add_errs(n, e, cf)
    if node.is_leaf:
        return as_leaf
    sub = sum(_prune(c, cf) for c in node.children)
    if as_leaf <= sub + 0.1:
        node.attr = -1
        node.children = []
        node.branch_p = None
        node.threshold = math.nan
        return as_leaf
    return sub


def train_c45(
    ds: Dataset,
    min_leaf: float = 2.0,
    prune_cf: float | None = 0.25,
    max_depth: int | None = None,
    m_features: int | None = None,
    rng: np.random.Generator | None = None,
) -> TreeModel:
    """Grow a C4.5 tree; ``prune_cf=None`` leaves it unpruned.

    ``m_features`` restricts each split to that many randomly drawn candidate
    attributes (random-forest style) and needs ``rng``.
    """
    if min_leaf < 1:
        raise ValueError("min_leaf must be >= 1")
    if not len(ds):
        raise ValueError("cannot train on an empty dataset")
    if m_features is not None:
        if not 1 <= m_features <= len(ds.attributes):
            raise ValueError("m_features must be between 1 and the number of attributes")
        if rng is None:
            raise ValueError("m_features needs an rng")
    b = _Builder(ds, float(min_leaf), max_depth, m_features, rng)
    root = b.build(ds.X, ds.y, ds.weights, 0, frozenset())
    if prune_cf is not None:
        _prune(root, prune_cf)
    return TreeModel(root, list(ds.attributes), tuple(ds.classes), float(min_leaf), prune_cf)
