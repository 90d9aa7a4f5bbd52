"""Natural-gradient boosting with a Normal predictive distribution.

The distribution is parametrized as ``theta = (mu, log_sigma)`` and scored by
the negative log-likelihood. A fitted model evaluates

    theta(x) = theta0 - eta * sum_m rho_m * f_m(x)

where ``f_m`` is the pair of stage-``m`` trees (one per parameter) fitted to
the per-row natural gradients, and ``rho_m`` comes from a halving line search.
``log_sigma`` is clamped to [ln 1e-6, ln 1e6] whenever sigma is needed; the
stored accumulators themselves are never clamped, so predictions on the
training rows reproduce the training state exactly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Union

import numpy as np

from .ensembles import BoostParams, _check_xy
from .errors import EmptyInputError, InvalidArgumentError, InvalidInputError, ModelFormatError
from .trees import RegressionTree, _check_matrix, fit_tree, presort

log = logging.getLogger(__name__)

LOG_SIGMA_MIN = math.log(1e-6)
LOG_SIGMA_MAX = math.log(1e6)
HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)
MAX_HALVINGS = 20

_STD_NORMAL = NormalDist()

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class NormalParams:
    mu: ArrayLike
    log_sigma: ArrayLike

    @property
    def clamped_log_sigma(self):
        return np.clip(self.log_sigma, LOG_SIGMA_MIN, LOG_SIGMA_MAX)

    @property
    def sigma(self):
        return np.exp(self.clamped_log_sigma)

    def __len__(self):
        return np.size(self.mu)


@dataclass(frozen=True)
class ScoreGrad:
    d_mu: ArrayLike
    d_logsigma: ArrayLike
    kind: str = "ordinary"

    def as_array(self) -> np.ndarray:
        return np.stack([np.asarray(self.d_mu, float), np.asarray(self.d_logsigma, float)], axis=-1)


def _finite_y(y):
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("observations must be finite")
    return y


def nll_score(params: NormalParams, y) -> ArrayLike:
    """-log N(y | mu, sigma^2), elementwise."""
    y = _finite_y(y)
    ls = params.clamped_log_sigma
    z = (y - params.mu) * np.exp(-ls)
    out = ls + 0.5 * z * z + HALF_LOG_2PI
    return float(out) if np.ndim(out) == 0 else out


def score_gradient(params: NormalParams, y) -> ScoreGrad:
    """Gradient of the NLL with respect to (mu, log_sigma)."""
    y = _finite_y(y)
    var = np.exp(2 * params.clamped_log_sigma)
    r = y - params.mu
    return ScoreGrad((params.mu - y) / var, 1.0 - r * r / var, "ordinary")


def fisher_info(params: NormalParams) -> np.ndarray:
    """Fisher information of the Normal in (mu, log_sigma) coordinates."""
    var = float(np.exp(2 * params.clamped_log_sigma))
    return np.array([[1.0 / var, 0.0], [0.0, 2.0]])


def natural_gradient(params: NormalParams, y) -> ScoreGrad:
    """Fisher-preconditioned gradient; closed form because the Fisher matrix is diagonal."""
    y = _finite_y(y)
    var = np.exp(2 * params.clamped_log_sigma)
    r = y - params.mu
    return ScoreGrad(params.mu - y, 0.5 * (1.0 - r * r / var), "natural")


def init_params(targets) -> NormalParams:
    """Maximum-likelihood Normal fit to all targets (population std)."""
    y = _finite_y(np.ravel(targets))
    if y.size == 0:
        raise EmptyInputError("cannot estimate initial parameters from no targets")
    mu = float(np.mean(y))
    std = float(np.std(y))
    log_sigma = math.log(std) if std > 0 else LOG_SIGMA_MIN
    return NormalParams(mu, float(np.clip(log_sigma, LOG_SIGMA_MIN, LOG_SIGMA_MAX)))


def _mean_nll(theta: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(nll_score(NormalParams(theta[:, 0], theta[:, 1]), y)))


def _step(theta: np.ndarray, f: np.ndarray, eta: float, rho: float) -> np.ndarray:
    # single expression shared by training and prediction so both round identically
    return theta - (eta * rho) * f


def _as_theta(current) -> np.ndarray:
    if isinstance(current, NormalParams):
        return np.column_stack([np.ravel(current.mu), np.ravel(current.log_sigma)]).astype(float)
    theta = np.asarray(current, dtype=float)
    return theta.reshape(-1, 2)


def line_search_rho(current_thetas, tree_outputs, targets, eta: float) -> float:
    """Largest rho in {1, 1/2, ..., 2^-20} that strictly lowers the mean NLL, else 0."""
    theta = _as_theta(current_thetas)
    f = np.asarray(tree_outputs, dtype=float).reshape(-1, 2)
    y = _finite_y(np.ravel(targets))
    if not (theta.shape[0] == f.shape[0] == y.size):
        raise InvalidArgumentError("thetas, tree outputs and targets must align by row")
    base = _mean_nll(theta, y)
    rho = 1.0
    for _ in range(MAX_HALVINGS + 1):
        if _mean_nll(_step(theta, f, eta, rho), y) < base:
            return rho
        rho *= 0.5
    return 0.0


@dataclass(eq=False)
class Stage:
    tree_mu: RegressionTree
    tree_logsigma: RegressionTree
    rho: float


@dataclass(eq=False)
class NGBoostModel:
    theta0: NormalParams
    stages: list[Stage]
    eta: float
    n_features: int
    # mean training NLL at init and after each stage; not persisted
    train_loss: list[float] = field(default_factory=list)

    family = "ngboost"
    probabilistic = True

    def tree_terms(self):
        """Composition of the mean: mu(x) = mu0 + sum(-eta * rho * tree_mu(x))."""
        return float(self.theta0.mu), [(-self.eta * s.rho, s.tree_mu) for s in self.stages]

    def predict(self, features) -> np.ndarray:
        return np.asarray(predict_dist(self, features).mu)

    def truncate(self, n: int) -> NGBoostModel:
        return NGBoostModel(self.theta0, self.stages[:n], self.eta, self.n_features, self.train_loss[: n + 1])

    def to_dict(self) -> dict:
        return {
            "n_features": self.n_features,
            "eta": float(self.eta),
            "theta0": {"mu": float(self.theta0.mu), "log_sigma": float(self.theta0.log_sigma)},
            "stages": [
                {"rho": float(s.rho), "tree_mu": s.tree_mu.to_dict(), "tree_logsigma": s.tree_logsigma.to_dict()}
                for s in self.stages
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> NGBoostModel:
        try:
            theta0 = NormalParams(float(d["theta0"]["mu"]), float(d["theta0"]["log_sigma"]))
            stages = [
                Stage(
                    RegressionTree.from_dict(s["tree_mu"]),
                    RegressionTree.from_dict(s["tree_logsigma"]),
                    float(s["rho"]),
                )
                for s in d["stages"]
            ]
            return cls(theta0, stages, float(d["eta"]), int(d["n_features"]))
        except (KeyError, TypeError) as exc:
            raise ModelFormatError(f"malformed ngboost payload: {exc}") from None


def fit_ngboost(features, targets, params: BoostParams = BoostParams()) -> NGBoostModel:
    """Boost one tree per distribution parameter per stage along natural gradients.

    Training stops after recording the first stage whose line search returns
    ``rho == 0``: without row subsampling every later stage would refit the
    same trees and be rejected the same way.
    """
    eta = params.learning_rate
    if not 0 < eta <= 1:
        raise InvalidArgumentError(f"learning rate must lie in (0, 1], got {eta}")
    X, y = _check_xy(features, targets)
    order = presort(X)
    theta0 = init_params(y)
    theta = np.tile([theta0.mu, theta0.log_sigma], (y.size, 1)).astype(float)
    model = NGBoostModel(theta0, [], eta, X.shape[1])
    model.train_loss.append(_mean_nll(theta, y))
    for m in range(params.n_estimators):
        grad = natural_gradient(NormalParams(theta[:, 0], theta[:, 1]), y)
        t_mu = fit_tree(X, grad.d_mu, None, params.tree_params, presorted=order)
        t_ls = fit_tree(X, grad.d_logsigma, None, params.tree_params, presorted=order)
        f = np.column_stack([t_mu.predict(X), t_ls.predict(X)])
        rho = line_search_rho(theta, f, y, eta)
        model.stages.append(Stage(t_mu, t_ls, rho))
        if rho == 0.0:
            model.train_loss.append(model.train_loss[-1])
            log.info("stage %d: line search found no descent; stopping", m + 1)
            break
        theta = _step(theta, f, eta, rho)
        model.train_loss.append(_mean_nll(theta, y))
    return model


def predict_dist(model: NGBoostModel, features) -> NormalParams:
    """Per-row (mu, log_sigma) with log_sigma clamped."""
    X = _check_matrix(features, model.n_features)
    theta = np.tile([model.theta0.mu, model.theta0.log_sigma], (X.shape[0], 1)).astype(float)
    for s in model.stages:
        if s.rho == 0.0:
            continue
        f = np.column_stack([s.tree_mu.predict(X), s.tree_logsigma.predict(X)])
        theta = _step(theta, f, model.eta, s.rho)
    return NormalParams(theta[:, 0], np.clip(theta[:, 1], LOG_SIGMA_MIN, LOG_SIGMA_MAX))


def normal_cdf(x) -> ArrayLike:
    x = np.asarray(x, dtype=float)
    out = 0.5 * np.vectorize(math.erfc)(-x / math.sqrt(2.0))
    return float(out) if out.ndim == 0 else out


def inverse_normal_cdf(p: float) -> float:
    """Standard-normal quantile."""
    if not 0 < p < 1:
        raise InvalidArgumentError(f"probability must lie in (0, 1), got {p}")
    return _STD_NORMAL.inv_cdf(p)


def confidence_interval(params: NormalParams, level: float = 0.8):
    """Central interval holding ``level`` probability mass: mu -/+ z * sigma."""
    if not 0 <= level < 1:
        raise InvalidArgumentError(f"level must lie in [0, 1), got {level}")
    z = inverse_normal_cdf((1 + level) / 2)
    half = z * params.sigma
    return params.mu - half, params.mu + half
