"""Prediction-value-change importance for tree ensembles."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .ensemble import TreeEnsembleModel
from .tree import Tree


@dataclass
class ImportanceReport:
    values: dict[tuple[str, str], float]    # (variable, activity) -> importance
    ordering: list[str]
    activities: list[str]
    raw: dict[str, dict[str, float]] | None = None   # activity -> variable -> unnormalised share

    def matrix(self) -> np.ndarray:
        """Activities x variables, variables in ``ordering``."""
        return np.array([[self.values[(v, a)] for v in self.ordering] for a in self.activities])

    def to_json(self) -> dict:
        return {"ordering": self.ordering, "activities": self.activities,
                "values": {a: {v: self.values[(v, a)] for v in self.ordering} for a in self.activities}}


def _node_change(tree: Tree) -> np.ndarray:
    """Per-node prediction change of its split: sum over the two children of
    count_child * ||value_child - value_node||^2, with internal node values the
    count-weighted mean of their children."""
    n = tree.n_nodes
    value = tree.value.copy()
    change = np.zeros(n)
    # children always have larger indices than their parent
    for node in range(n - 1, -1, -1):
        if tree.feature[node] < 0:
            continue
        l, r = tree.left[node], tree.right[node]
        cl, cr = tree.count[l], tree.count[r]
        value[node] = (cl * value[l] + cr * value[r]) / max(cl + cr, 1)
        change[node] = (cl * np.sum((value[l] - value[node]) ** 2)
                        + cr * np.sum((value[r] - value[node]) ** 2))
    return change


def split_importance(model: TreeEnsembleModel) -> dict[str, float]:
    """Share of total prediction change attributable to each schema variable
    (sums to 1 unless the model never splits)."""
    sources = model.encoder.sources
    variables = [name for name, _ in model.encoder.variables]
    total = dict.fromkeys(variables, 0.0)
    for tree in model.trees:
        change = _node_change(tree)
        for node in np.flatnonzero(tree.feature >= 0):
            total[sources[tree.feature[node]]] += change[node]
    s = sum(total.values())
    if s > 0:
        total = {k: v / s for k, v in total.items()}
    return total


def _report(raw: dict[str, dict[str, float]], variables: list[str]) -> ImportanceReport:
    activities = list(raw)
    values = {}
    for a in activities:
        top = max(raw[a].values(), default=0.0)
        for v in variables:
            values[(v, a)] = raw[a][v] / top if top > 0 else 0.0
    mean = {v: np.mean([values[(v, a)] for a in activities]) for v in variables}
    ordering = sorted(variables, key=lambda v: (-mean[v], v))
    return ImportanceReport(values, ordering, activities, raw)


def variable_importance(model: TreeEnsembleModel, train=None) -> ImportanceReport:
    """Importance of each variable for each class of ``model``, row-normalised
    so the most important variable of every class scores 1."""
    share = split_importance(model)
    variables = [name for name, _ in model.encoder.variables]
    if train is not None:
        names = train.schema.names
        unknown = set(variables) - set(names)
        if unknown:
            raise ValueError(f"model variables missing from dataset schema: {sorted(unknown)}")
    return _report({a: dict(share) for a in model.class_order}, variables)


def aggregate_importance(reports: Iterable[ImportanceReport], weights: Iterable[float] | None = None) -> ImportanceReport:
    """Average the per-pair variable shares of every activity over the models it
    took part in (optionally weighted), then row-normalise."""
    reports = list(reports)
    weights = [1.0] * len(reports) if weights is None else list(weights)
    acc: dict[str, dict[str, float]] = {}
    wsum: dict[str, float] = {}
    variables: list[str] = []
    for rep, wt in zip(reports, weights):
        for a, shares in rep.raw.items():
            row = acc.setdefault(a, {})
            for v, x in shares.items():
                row[v] = row.get(v, 0.0) + wt * x
                if v not in variables:
                    variables.append(v)
            wsum[a] = wsum.get(a, 0.0) + wt
    raw = {a: {v: acc[a].get(v, 0.0) / wsum[a] for v in variables} for a in acc}
    return _report(raw, variables)
