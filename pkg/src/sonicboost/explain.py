"""Exact Shapley attributions for tree-ensemble predictions.

The coalition value of a feature subset S is the path-dependent conditional
expectation of the model output: inside each tree, splits on features in S
follow the row's branch and splits on other features average both branches
weighted by training cover. Shapley values follow by exact enumeration of
all 2^p subsets, so p is capped at 20.

For natural-gradient models the explained output is the predicted mean.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyInputError, InvalidInputError, ModelFormatError, SchemaError, UnsupportedSizeError
from .trees import RegressionTree, _check_matrix

MAX_FEATURES = 20
_CHUNK_ELEMENTS = 1 << 21


@dataclass(frozen=True)
class Attribution:
    phi0: float
    phis: np.ndarray
    fx: float


@dataclass(frozen=True)
class ImportanceSummary:
    features: list[str]
    mean_abs_shap: list[float]

    def items(self):
        return list(zip(self.features, self.mean_abs_shap))

    def rank(self, feature: str) -> int:
        """1-based position in the descending importance order."""
        return self.features.index(feature) + 1


@dataclass(frozen=True)
class DependenceRecord:
    depth_index: int
    value_a: float
    value_b: float
    shap_a: float


def _terms(model):
    if isinstance(model, tuple) and len(model) == 2:
        base, terms = model
    elif hasattr(model, "tree_terms"):
        base, terms = model.tree_terms()
    else:
        trees = list(model)
        base, terms = 0.0, [(1.0 / len(trees), t) for t in trees]
    for _, t in terms:
        if t.cover is None or len(t.cover) != t.n_nodes or not np.all(t.cover > 0):
            raise ModelFormatError("tree lacks positive node covers; cannot condition on subsets")
    return float(base), list(terms)


def _n_features(terms, fallback=None) -> int:
    if terms:
        return terms[0][1].n_features
    if fallback is None:
        raise EmptyInputError("model has no trees and no feature count")
    return fallback


def _tree_expectation(tree: RegressionTree, x: np.ndarray, known: frozenset) -> float:
    def rec(i):
        f = tree.feature[i]
        if f < 0:
            return tree.value[i]
        l, r = tree.left[i], tree.right[i]
        if f in known:
            return rec(l if x[f] <= tree.threshold[i] else r)
        cl, cr = tree.cover[l], tree.cover[r]
        return (cl * rec(l) + cr * rec(r)) / (cl + cr)

    return float(rec(0))


def subset_expectation(model, x, known: Iterable[int]) -> float:
    """Cover-weighted expectation of the model output given the features in ``known``.

    ``model`` is a fitted model, a ``(base, [(coef, tree), ...])`` pair, or a
    plain list of trees (averaged like a forest).
    """
    base, terms = _terms(model)
    x = np.asarray(x, dtype=float).ravel()
    if terms and x.size != terms[0][1].n_features:
        raise InvalidInputError(f"expected {terms[0][1].n_features} features, got {x.size}")
    known = frozenset(int(k) for k in known)
    return base + sum(c * _tree_expectation(t, x, known) for c, t in terms)


def _local_values(tree: RegressionTree, X: np.ndarray, used: np.ndarray) -> np.ndarray:
    """v(S) for one tree over every subset S of the features it uses: (rows, 2^d)."""
    d = used.size
    slot = {int(f): k for k, f in enumerate(used)}
    masks = np.arange(1 << d)
    res = [None] * tree.n_nodes
    # preorder layout: children always sit after their parent
    for i in range(tree.n_nodes - 1, -1, -1):
        f = tree.feature[i]
        if f < 0:
            res[i] = tree.value[i]
            continue
        l, r = tree.left[i], tree.right[i]
        vl, vr = res[l], res[r]
        res[l] = res[r] = None
        known = ((masks >> slot[int(f)]) & 1).astype(bool)
        go_left = (X[:, f] <= tree.threshold[i])[:, None]
        cl, cr = tree.cover[l], tree.cover[r]
        followed = np.where(go_left, vl, vr)
        averaged = (cl * vl + cr * vr) / (cl + cr)
        res[i] = np.where(known, followed, averaged)
    return np.broadcast_to(res[0], (X.shape[0], 1 << d))


def subset_value_table(model, X) -> np.ndarray:
    """Coalition values for every row and every subset: shape (rows, 2^p).

    Column ``m`` holds the subset whose members are the set bits of ``m``.
    """
    base, terms = _terms(model)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    p = _n_features(terms, X.shape[1])
    X = _check_matrix(X, p)
    if p > MAX_FEATURES:
        raise UnsupportedSizeError(f"exact enumeration supports at most {MAX_FEATURES} features, got {p}")
    masks = np.arange(1 << p)
    out = np.full((X.shape[0], 1 << p), base)
    chunk = max(1, _CHUNK_ELEMENTS >> p)
    prepared = []
    for coef, tree in terms:
        used = np.unique(tree.feature[tree.feature >= 0])
        local = np.zeros(masks.size, dtype=np.int64)
        for k, f in enumerate(used):
            local |= ((masks >> int(f)) & 1) << k
        prepared.append((coef, tree, used, local))
    for start in range(0, X.shape[0], chunk):
        rows = X[start : start + chunk]
        acc = out[start : start + chunk]
        for coef, tree, used, local in prepared:
            acc += coef * _local_values(tree, rows, used)[:, local]
    return out


def _shapley_weights(p: int) -> np.ndarray:
    return np.array([math.factorial(s) * math.factorial(p - s - 1) / math.factorial(p) for s in range(p)])


def attributions_from_values(values: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(phi0, phis, fx) from a coalition-value table."""
    masks = np.arange(1 << p)
    sizes = np.array([bin(m).count("1") for m in masks])
    weights = _shapley_weights(p) if p else np.zeros(0)
    phis = np.zeros((values.shape[0], p))
    for j in range(p):
        without = masks[(masks >> j) & 1 == 0]
        phis[:, j] = (values[:, without | (1 << j)] - values[:, without]) @ weights[sizes[without]]
    return values[:, 0].copy(), phis, values[:, -1].copy()


def explain_rows(model, X) -> list[Attribution]:
    """Shapley attributions for every row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    values = subset_value_table(model, X)
    p = X.shape[1]
    phi0, phis, fx = attributions_from_values(values, p)
    return [Attribution(float(phi0[i]), phis[i], float(fx[i])) for i in range(X.shape[0])]


def shap_values(model, x) -> Attribution:
    x = np.asarray(x, dtype=float).ravel()
    return explain_rows(model, x.reshape(1, -1))[0]


def _phi_matrix(attributions: Sequence[Attribution]) -> np.ndarray:
    if len(attributions) == 0:
        raise EmptyInputError("no attributions given")
    return np.vstack([np.asarray(a.phis, dtype=float) for a in attributions])


def mean_abs_importance(attributions: Sequence[Attribution], feature_names: Sequence[str]) -> ImportanceSummary:
    """Mean |phi_j| per feature, largest first (ties keep input order)."""
    phis = _phi_matrix(attributions)
    if phis.shape[1] != len(feature_names):
        raise SchemaError(f"{phis.shape[1]} attribution columns but {len(feature_names)} feature names")
    imp = np.mean(np.abs(phis), axis=0)
    order = sorted(range(len(feature_names)), key=lambda j: -imp[j])
    return ImportanceSummary([feature_names[j] for j in order], [float(imp[j]) for j in order])


def _aligned(attributions, feature_values, depth_index):
    phis = _phi_matrix(attributions)
    values = np.atleast_2d(np.asarray(feature_values, dtype=float))
    if values.shape != phis.shape:
        raise InvalidInputError(f"feature values {values.shape} do not align with attributions {phis.shape}")
    depth = np.arange(len(phis)) if depth_index is None else np.asarray(depth_index)
    if depth.size != len(phis):
        raise InvalidInputError("depth index does not align with attributions")
    return phis, values, depth


def beeswarm_export(attributions, feature_values, feature_names, depth_index=None) -> list[dict]:
    """One record per (row, feature) carrying the SHAP value and the raw feature value."""
    phis, values, depth = _aligned(attributions, feature_values, depth_index)
    if len(feature_names) != phis.shape[1]:
        raise InvalidInputError("feature names do not align with attributions")
    return [
        {"feature": name, "depth_index": int(depth[i]), "shap": float(phis[i, j]), "value": float(values[i, j])}
        for i in range(len(phis))
        for j, name in enumerate(feature_names)
    ]


def dependence_export(
    feature_a: str, feature_b: str, attributions, feature_values, feature_names, depth_index=None
) -> list[DependenceRecord]:
    """Per-row (value of a, value of b, SHAP of a) for coupling scatter plots."""
    names = list(feature_names)
    for f in (feature_a, feature_b):
        if f not in names:
            raise SchemaError(f"unknown feature {f!r}; available: {', '.join(names)}")
    phis, values, depth = _aligned(attributions, feature_values, depth_index)
    a, b = names.index(feature_a), names.index(feature_b)
    return [
        DependenceRecord(int(depth[i]), float(values[i, a]), float(values[i, b]), float(phis[i, a]))
        for i in range(len(phis))
    ]


def baseline_summary(attributions: Sequence[Attribution]) -> dict:
    """Cover-based phi0 next to the mean explained output over the same rows.

    The two differ in general: phi0 is an expectation under training covers,
    the mean output is taken over the explained rows.
    """
    if not attributions:
        raise EmptyInputError("no attributions given")
    phi0 = float(attributions[0].phi0)
    mean_fx = float(np.mean([a.fx for a in attributions]))
    return {"phi0_cover_expectation": phi0, "mean_output_explained_rows": mean_fx, "difference": mean_fx - phi0}


def write_records(path, records, fields: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for rec in records:
            row = rec if isinstance(rec, dict) else rec.__dict__
            w.writerow([repr(row[f]) if isinstance(row[f], float) else row[f] for f in fields])
