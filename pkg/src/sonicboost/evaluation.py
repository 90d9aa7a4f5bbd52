"""Regression metrics, interval coverage, variance flags and grid search."""

from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import EmptyInputError, InvalidArgumentError, InvalidInputError, SonicBoostError
from .ensembles import BoostParams

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricsReport:
    mse: float
    rmse: float
    mae: float
    evs: float
    r2: float
    n: int

    def to_dict(self) -> dict:
        return {"mse": self.mse, "rmse": self.rmse, "mae": self.mae, "evs": self.evs, "r2": self.r2, "n": self.n}


@dataclass(frozen=True)
class CoverageReport:
    level: float
    covered: int
    total: int
    fraction: float

    def to_dict(self) -> dict:
        return {"level": self.level, "covered": self.covered, "total": self.total, "fraction": self.fraction}


@dataclass(frozen=True)
class QualityFlags:
    flagged_indices: list[int]
    threshold: float
    rule: str
    evaluated: int

    def to_dict(self) -> dict:
        return {
            "flagged_indices": list(self.flagged_indices),
            "threshold": self.threshold,
            "rule": self.rule,
            "evaluated": self.evaluated,
            "n_flagged": len(self.flagged_indices),
        }


def _pair(y, yhat):
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.size != yhat.size:
        raise InvalidInputError(f"length mismatch: {y.size} observations, {yhat.size} predictions")
    return y, yhat


def regression_metrics(y, yhat) -> MetricsReport:
    """MSE, RMSE, MAE, explained variance and R^2 (population variances)."""
    y, yhat = _pair(y, yhat)
    if y.size < 2:
        raise InvalidInputError("need at least two observations")
    if np.ptp(y) == 0:
        raise InvalidInputError("R^2 and explained variance are undefined for constant observations")
    resid = y - yhat
    mse = float(np.mean(resid**2))
    var_y = float(np.var(y))
    return MetricsReport(
        mse=mse,
        rmse=math.sqrt(mse),
        mae=float(np.mean(np.abs(resid))),
        evs=1.0 - float(np.var(resid)) / var_y,
        r2=1.0 - float(np.sum(resid**2)) / float(np.sum((y - y.mean()) ** 2)),
        n=int(y.size),
    )


def interval_coverage(y, intervals, level: float) -> CoverageReport:
    """Fraction of observations inside their closed interval ``[lo, hi]``."""
    y = np.asarray(y, dtype=float).ravel()
    if isinstance(intervals, tuple) and len(intervals) == 2 and np.ndim(intervals[0]) == 1:
        lo, hi = (np.asarray(a, dtype=float) for a in intervals)
    else:
        arr = np.asarray(intervals, dtype=float).reshape(-1, 2)
        lo, hi = arr[:, 0], arr[:, 1]
    if not (lo.size == hi.size == y.size):
        raise InvalidInputError(f"{y.size} observations but {lo.size} intervals")
    if np.any(lo > hi):
        raise InvalidInputError("interval with lo > hi")
    covered = int(np.sum((lo <= y) & (y <= hi)))
    total = int(y.size)
    return CoverageReport(level, covered, total, covered / total if total else math.nan)


def variance_flags(sigmas, depth_indices, k: float = 1.5) -> QualityFlags:
    """Flag rows whose sigma exceeds median + k * IQR of all sigmas."""
    s = np.asarray(sigmas, dtype=float).ravel()
    d = np.asarray(depth_indices).ravel()
    if s.size == 0:
        raise EmptyInputError("no sigmas to screen")
    if s.size != d.size:
        raise InvalidInputError("sigmas and depth indices differ in length")
    if k < 0:
        raise InvalidArgumentError("k must be nonnegative")
    q25, med, q75 = np.percentile(s, [25, 50, 75])
    iqr = q75 - q25
    threshold = math.inf if math.isinf(k) else med + k * iqr
    flagged = [int(i) for i in d[s > threshold]]
    return QualityFlags(flagged, float(threshold), f"sigma > median + {k} * IQR", int(s.size))


@dataclass
class Trial:
    params: BoostParams
    metrics: Optional[MetricsReport]
    seconds: float
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "metrics": None if self.metrics is None else self.metrics.to_dict(),
            "seconds": self.seconds,
            "error": self.error,
        }


@dataclass
class GridSearchResult:
    best_params: BoostParams
    best_score: float
    trials: list[Trial] = field(default_factory=list)

    def to_dict(self, include_timing: bool = True) -> dict:
        trials = [t.to_dict() for t in self.trials]
        if not include_timing:
            for t in trials:
                t.pop("seconds")
        return {"best_params": self.best_params.to_dict(), "best_score": self.best_score, "trials": trials}


def _selection_key(trial: Trial):
    p = trial.params
    return (-trial.metrics.r2, p.n_estimators, p.tree_params.max_depth, p.learning_rate)


def grid_search(
    train,
    valid,
    grid: dict,
    target: str,
    family: str,
    features: Sequence[str] | None = None,
    base: BoostParams | None = None,
    fitter: Callable | None = None,
) -> GridSearchResult:
    """Score every lattice point of ``grid`` by validation R^2.

    ``grid`` maps ``learning_rate``, ``max_depth`` and ``n_estimators`` to
    lists of values. For each (learning_rate, max_depth) pair one model with
    the largest estimator count is trained; smaller counts are its prefixes,
    which equal independently trained models because every family is
    deterministic stage by stage. Ties on R^2 go to fewer estimators, then
    lower depth, then lower learning rate. A failing lattice point is logged
    as a failed trial.
    """
    from .models import fit_model

    fitter = fitter or fit_model
    if valid.n_rows == 0:
        raise EmptyInputError("validation table is empty")
    base = base or BoostParams()
    lrs = sorted(grid.get("learning_rate", [base.learning_rate]))
    depths = sorted(grid.get("max_depth", [base.tree_params.max_depth]))
    counts = sorted(grid.get("n_estimators", [base.n_estimators]))
    if not (lrs and depths and counts):
        raise InvalidArgumentError("grid is empty")
    if features is None:
        features = [n for n in train.names_of_kind("feature")]
    Xt, yt = train.matrix(features), train.column(target)
    Xv, yv = valid.matrix(features), valid.column(target)

    trials = []
    for lr, depth in itertools.product(lrs, depths):
        tp = replace(base.tree_params, max_depth=int(depth))
        top = replace(base, learning_rate=float(lr), tree_params=tp, n_estimators=int(counts[-1]))
        start = time.perf_counter()
        try:
            model = fitter(family, Xt, yt, top)
            err = None
        except SonicBoostError as exc:
            model, err = None, str(exc)
            log.warning("grid point lr=%s depth=%s failed: %s", lr, depth, exc)
        fit_seconds = time.perf_counter() - start
        for n_est in counts:
            params = replace(top, n_estimators=int(n_est))
            if model is None:
                trials.append(Trial(params, None, fit_seconds, err))
                continue
            t0 = time.perf_counter()
            try:
                metrics = regression_metrics(yv, model.truncate(int(n_est)).predict(Xv))
                trials.append(Trial(params, metrics, fit_seconds + time.perf_counter() - t0))
            except SonicBoostError as exc:
                trials.append(Trial(params, None, fit_seconds, str(exc)))
    ok = [t for t in trials if t.metrics is not None]
    if not ok:
        raise SonicBoostError("every grid point failed")
    best = min(ok, key=_selection_key)
    return GridSearchResult(best.params, best.metrics.r2, trials)


def _mean_metrics(reports: Sequence[MetricsReport]) -> MetricsReport:
    return MetricsReport(
        mse=float(np.mean([m.mse for m in reports])),
        rmse=float(np.mean([m.rmse for m in reports])),
        mae=float(np.mean([m.mae for m in reports])),
        evs=float(np.mean([m.evs for m in reports])),
        r2=float(np.mean([m.r2 for m in reports])),
        n=int(sum(m.n for m in reports)),
    )


def cross_validated_search(splits, grid: dict, target: str, family: str, features=None, base=None, fitter=None):
    """Grid search scored by validation R^2 averaged over (train, valid) splits.

    A lattice point that fails on any split is recorded as failed.
    """
    per_split = [grid_search(tr, va, grid, target, family, features, base, fitter) for tr, va in splits]
    trials = []
    for column in zip(*(r.trials for r in per_split)):
        errors = [t.error for t in column if t.metrics is None]
        seconds = float(sum(t.seconds for t in column))
        if errors:
            trials.append(Trial(column[0].params, None, seconds, errors[0]))
        else:
            trials.append(Trial(column[0].params, _mean_metrics([t.metrics for t in column]), seconds))
    ok = [t for t in trials if t.metrics is not None]
    if not ok:
        raise SonicBoostError("every grid point failed")
    best = min(ok, key=_selection_key)
    return GridSearchResult(best.params, best.metrics.r2, trials)
