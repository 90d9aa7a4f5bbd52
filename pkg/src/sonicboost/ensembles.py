"""Random forest and gradient-boosted tree baselines.

Every fitted model exposes ``tree_terms()``, returning ``(base, terms)`` with
``prediction(x) = base + sum(coef * tree(x) for coef, tree in terms)``. The
explainer relies only on that composition rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from .errors import EmptyInputError, InvalidArgumentError, InvalidInputError, ModelFormatError
from .trees import RegressionTree, TreeParams, _check_matrix, _grow, fit_tree, presort

FIRST_ORDER = "first_order"
SECOND_ORDER = "second_order"


@dataclass(frozen=True)
class BoostParams:
    n_estimators: int = 100
    learning_rate: float = 0.1
    tree_params: TreeParams = field(default_factory=TreeParams)
    # second-order regularizers (leaf L2 penalty, minimum split gain)
    reg_lambda: float = 1.0
    gamma: float = 0.0
    # forest only; disabling it is a test hook
    bootstrap: bool = True

    def __post_init__(self):
        if not (isinstance(self.n_estimators, (int, np.integer)) and self.n_estimators >= 1):
            raise InvalidArgumentError("n_estimators must be a positive integer")
        if not (math.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise InvalidArgumentError("learning_rate must be finite and nonnegative")
        if self.reg_lambda < 0 or self.gamma < 0:
            raise InvalidArgumentError("reg_lambda and gamma must be nonnegative")

    def to_dict(self) -> dict:
        tp = self.tree_params
        return {
            "n_estimators": int(self.n_estimators),
            "learning_rate": float(self.learning_rate),
            "max_depth": int(tp.max_depth),
            "min_samples_leaf": int(tp.min_samples_leaf),
            "feature_subsample": tp.feature_subsample,
            "seed": int(tp.seed),
            "reg_lambda": float(self.reg_lambda),
            "gamma": float(self.gamma),
            "bootstrap": bool(self.bootstrap),
        }

    @classmethod
    def from_dict(cls, d: dict) -> BoostParams:
        tp = TreeParams(
            max_depth=int(d.get("max_depth", 4)),
            min_samples_leaf=int(d.get("min_samples_leaf", 1)),
            feature_subsample=d.get("feature_subsample"),
            seed=int(d.get("seed", 0)),
        )
        return cls(
            n_estimators=int(d.get("n_estimators", 100)),
            learning_rate=float(d.get("learning_rate", 0.1)),
            tree_params=tp,
            reg_lambda=float(d.get("reg_lambda", 1.0)),
            gamma=float(d.get("gamma", 0.0)),
            bootstrap=bool(d.get("bootstrap", True)),
        )


def _check_xy(features, targets, min_rows=2):
    X = _check_matrix(features)
    y = np.asarray(targets, dtype=float).ravel()
    if X.shape[0] == 0 or y.size == 0:
        raise EmptyInputError("cannot fit on empty input")
    if X.shape[0] != y.size:
        raise InvalidArgumentError(f"features have {X.shape[0]} rows but targets have {y.size}")
    if y.size < min_rows:
        raise InvalidArgumentError(f"need at least {min_rows} rows")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("targets contain non-finite values")
    return X, y


def _tree_seed(seed: int, index: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, index, stream]).generate_state(1)[0])


@dataclass(eq=False)
class ForestModel:
    trees: list[RegressionTree]
    bootstrap_seeds: list[int]
    feature_subsample: int
    n_features: int

    family = "random_forest"

    def tree_terms(self):
        k = len(self.trees)
        return 0.0, [(1.0 / k, t) for t in self.trees]

    def predict(self, features) -> np.ndarray:
        X = _check_matrix(features, self.n_features)
        return np.mean([t.predict(X) for t in self.trees], axis=0)

    def truncate(self, n: int) -> ForestModel:
        return ForestModel(self.trees[:n], self.bootstrap_seeds[:n], self.feature_subsample, self.n_features)

    def to_dict(self) -> dict:
        return {
            "n_features": self.n_features,
            "feature_subsample": self.feature_subsample,
            "bootstrap_seeds": list(self.bootstrap_seeds),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> ForestModel:
        try:
            return cls(
                [RegressionTree.from_dict(t) for t in d["trees"]],
                [int(s) for s in d["bootstrap_seeds"]],
                int(d["feature_subsample"]),
                int(d["n_features"]),
            )
        except (KeyError, TypeError) as exc:
            raise ModelFormatError(f"malformed forest payload: {exc}") from None


@dataclass(eq=False)
class GbdtModel:
    init_value: float
    stages: list[RegressionTree]
    learning_rate: float
    n_features: int
    variant: str = FIRST_ORDER
    reg_lambda: float = 0.0
    gamma: float = 0.0
    # training MSE after init and after each stage; not persisted
    train_loss: list[float] = field(default_factory=list)

    @property
    def family(self) -> str:
        return "gbdt" if self.variant == FIRST_ORDER else "second_order"

    def tree_terms(self):
        return self.init_value, [(self.learning_rate, t) for t in self.stages]

    def predict(self, features) -> np.ndarray:
        X = _check_matrix(features, self.n_features)
        out = np.full(X.shape[0], self.init_value)
        for t in self.stages:
            out += self.learning_rate * t.predict(X)
        return out

    def truncate(self, n: int) -> GbdtModel:
        return replace(self, stages=self.stages[:n], train_loss=self.train_loss[: n + 1])

    def to_dict(self) -> dict:
        return {
            "n_features": self.n_features,
            "init_value": float(self.init_value),
            "learning_rate": float(self.learning_rate),
            "variant": self.variant,
            "reg_lambda": float(self.reg_lambda),
            "gamma": float(self.gamma),
            "stages": [t.to_dict() for t in self.stages],
        }

    @classmethod
    def from_dict(cls, d: dict) -> GbdtModel:
        try:
            return cls(
                init_value=float(d["init_value"]),
                stages=[RegressionTree.from_dict(t) for t in d["stages"]],
                learning_rate=float(d["learning_rate"]),
                n_features=int(d["n_features"]),
                variant=d["variant"],
                reg_lambda=float(d.get("reg_lambda", 0.0)),
                gamma=float(d.get("gamma", 0.0)),
            )
        except (KeyError, TypeError) as exc:
            raise ModelFormatError(f"malformed booster payload: {exc}") from None


def fit_random_forest(features, targets, params: BoostParams = BoostParams()) -> ForestModel:
    """Bagged CART trees with per-split random feature subsets.

    Tree ``i`` draws its bootstrap sample and its feature subsets from seeds
    derived from ``(params.tree_params.seed, i)``, so the first ``k`` trees of
    a larger forest equal a ``k``-tree forest.
    """
    X, y = _check_xy(features, targets)
    n, p = X.shape
    tp = params.tree_params
    k = tp.feature_subsample if tp.feature_subsample is not None else math.ceil(p / 3)
    if not 1 <= k <= p:
        raise InvalidArgumentError(f"feature_subsample must lie in [1, {p}]")
    order = presort(X)
    trees, seeds = [], []
    for i in range(params.n_estimators):
        boot_seed = _tree_seed(tp.seed, i, 0)
        if params.bootstrap:
            draws = np.random.default_rng(boot_seed).integers(0, n, n)
            weights = np.bincount(draws, minlength=n).astype(float)
        else:
            weights = None
        sub = None if k == p else k
        tree_params = replace(tp, feature_subsample=sub, seed=_tree_seed(tp.seed, i, 1))
        trees.append(fit_tree(X, y, weights, tree_params, presorted=order))
        seeds.append(boot_seed)
    return ForestModel(trees, seeds, k, p)


def fit_gbdt(features, targets, params: BoostParams = BoostParams()) -> GbdtModel:
    """First-order boosting on squared loss: each stage fits the residuals."""
    X, y = _check_xy(features, targets)
    order = presort(X)
    init = float(np.mean(y))
    F = np.full(y.size, init)
    model = GbdtModel(init, [], params.learning_rate, X.shape[1], FIRST_ORDER)
    model.train_loss.append(float(np.mean((y - F) ** 2)))
    for _ in range(params.n_estimators):
        tree = fit_tree(X, y - F, None, params.tree_params, presorted=order)
        F = F + params.learning_rate * tree.predict(X)
        model.stages.append(tree)
        model.train_loss.append(float(np.mean((y - F) ** 2)))
    return model


def fit_second_order_boost(features, targets, params: BoostParams = BoostParams()) -> GbdtModel:
    """Second-order boosting on squared loss with leaf L2 penalty and split gate.

    With gradient ``g = F - y`` and hessian 1, a split is taken when
    ``(G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda))/2 >= gamma``
    and leaves get ``-G/(H+lambda)``.
    """
    X, y = _check_xy(features, targets)
    order = presort(X)
    init = float(np.mean(y))
    F = np.full(y.size, init)
    hess = np.ones(y.size)
    model = GbdtModel(
        init, [], params.learning_rate, X.shape[1], SECOND_ORDER, params.reg_lambda, params.gamma
    )
    model.train_loss.append(float(np.mean((y - F) ** 2)))
    for _ in range(params.n_estimators):
        grad = F - y
        tree = _grow(
            X, -grad / hess, hess, params.tree_params, presorted=order,
            reg_lambda=params.reg_lambda, gamma=params.gamma,
        )
        F = F + params.learning_rate * tree.predict(X)
        model.stages.append(tree)
        model.train_loss.append(float(np.mean((y - F) ** 2)))
    return model


Model = Union[ForestModel, GbdtModel]


def predict_ensemble(model, features) -> np.ndarray:
    return model.predict(features)
