"""Versioned JSON text format for trained models.

Top level::

    {"format": "nrcvanet-model", "version": 1, "kind": "tree" | "nb" | "forest" | "boost",
     "attributes": [{"name", "kind", "values"}], "classes": [...], ...kind-specific fields}

Floats are written with full precision, so loading gives back identical
predictions. A tree node is ``{"dist": [...], "label": i}`` for leaves and
additionally ``"attr"``, ``"threshold"`` (null for nominal), ``"branch_p"``
and ``"children"`` for internal nodes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .bayes import NBModel
from .dataset import Attribute
from .ensemble import BoostModel, BoostRound, ForestModel
from .tree import TreeModel, TreeNode

FORMAT = "nrcvanet-model"
VERSION = 1


class ModelFormatError(ValueError):
    pass


def _attrs_out(attrs) -> list:
    return [{"name": a.name, "kind": a.kind, "values": list(a.values)} for a in attrs]


def _attrs_in(d) -> list[Attribute]:
    return [Attribute(a["name"], a["kind"], tuple(a["values"])) for a in d]


def _node_out(n: TreeNode) -> dict:
    d = {"dist": n.dist.tolist(), "label": n.label}
    if not n.is_leaf:
        d["attr"] = n.attr
        d["threshold"] = None if n.threshold != n.threshold else n.threshold
        d["branch_p"] = n.branch_p.tolist()
        d["children"] = [_node_out(c) for c in n.children]
    return d


def _node_in(d: dict) -> TreeNode:
    n = TreeNode(np.array(d["dist"], dtype=float), int(d["label"]))
    if "attr" in d:
        n.attr = int(d["attr"])
        n.threshold = float("nan") if d["threshold"] is None else float(d["threshold"])
        n.branch_p = np.array(d["branch_p"], dtype=float)
        n.children = [_node_in(c) for c in d["children"]]
    return n


def _tree_body(m: TreeModel) -> dict:
    return {"min_leaf": m.min_leaf, "prune_cf": m.prune_cf, "root": _node_out(m.root)}


def _tree_from(body: dict, attrs, classes) -> TreeModel:
    return TreeModel(_node_in(body["root"]), attrs, classes, body["min_leaf"], body["prune_cf"])


def model_to_dict(model) -> dict:
    head = {"format": FORMAT, "version": VERSION}
    if isinstance(model, TreeModel):
        return {**head, "kind": "tree", "attributes": _attrs_out(model.attributes),
                "classes": list(model.classes), **_tree_body(model)}
    if isinstance(model, NBModel):
        return {
            **head, "kind": "nb", "attributes": _attrs_out(model.attributes), "classes": list(model.classes),
            "alpha": model.alpha,
            "priors": model.priors.tolist(),
            "tables": {str(j): t.tolist() for j, t in sorted(model.tables.items())},
            "means": {str(j): t.tolist() for j, t in sorted(model.means.items())},
            "variances": {str(j): t.tolist() for j, t in sorted(model.variances.items())},
        }
    if isinstance(model, ForestModel):
        return {
            **head, "kind": "forest", "attributes": _attrs_out(model.attributes), "classes": list(model.classes),
            "m_features": model.m_features, "tree_seeds": model.tree_seeds,
            "trees": [_tree_body(t) for t in model.trees],
        }
    if isinstance(model, BoostModel):
        return {
            **head, "kind": "boost", "attributes": _attrs_out(model.attributes), "classes": list(model.classes),
            "rounds": [{"error": r.error, "alpha": r.alpha, "weights": r.weights.tolist(), "tree": _tree_body(r.model)}
                       for r in model.rounds],
        }
    raise TypeError(f"cannot serialize {type(model).__name__}")


def model_from_dict(d: dict):
    if d.get("format") != FORMAT:
        raise ModelFormatError("not a model file")
    if d.get("version") != VERSION:
        raise ModelFormatError(f"unsupported model version {d.get('version')!r}")
    attrs = _attrs_in(d["attributes"])
    classes = tuple(d["classes"])
    kind = d.get("kind")
    if kind == "tree":
        return _tree_from(d, attrs, classes)
    if kind == "nb":
        return NBModel(
            attrs, classes, float(d["alpha"]), np.array(d["priors"]),
            {int(j): np.array(t) for j, t in d["tables"].items()},
            {int(j): np.array(t) for j, t in d["means"].items()},
            {int(j): np.array(t) for j, t in d["variances"].items()},
        )
    if kind == "forest":
        trees = [_tree_from(b, attrs, classes) for b in d["trees"]]
        return ForestModel(trees, list(d["tree_seeds"]), attrs, classes, int(d["m_features"]))
    if kind == "boost":
        rounds = [BoostRound(_tree_from(r["tree"], attrs, classes), r["error"], r["alpha"], np.array(r["weights"]))
                  for r in d["rounds"]]
        return BoostModel(rounds, attrs, classes)
    raise ModelFormatError(f"unknown model kind {kind!r}")


def dumps_model(model) -> str:
    return json.dumps(model_to_dict(model), sort_keys=True, allow_nan=False)


def loads_model(text: str):
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"line {e.lineno}: {e.msg}") from None
    try:
        return model_from_dict(d)
    except (KeyError, TypeError, IndexError) as e:
        raise ModelFormatError(f"malformed model: {e}") from None


def save_model(model, path: str | Path) -> None:
    Path(path).write_text(dumps_model(model) + "\n")


def load_model(path: str | Path):
    return loads_model(Path(path).read_text())
