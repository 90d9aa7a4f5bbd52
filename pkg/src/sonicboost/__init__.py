"""Tree ensembles, natural-gradient boosting and Shapley explanations for
reconstructing sonic slowness logs from other well logs."""

from .dataio import LogColumnSpec, LogTable, clean, kfold_split, load_table, split_holdout, summarize, transform_resistivity
from .ensembles import BoostParams, fit_gbdt, fit_random_forest, fit_second_order_boost, predict_ensemble
from .evaluation import cross_validated_search, grid_search, interval_coverage, regression_metrics, variance_flags
from .explain import explain_rows, mean_abs_importance, shap_values, subset_expectation
from .models import ModelFile, fit_model
from .ngboost import NormalParams, confidence_interval, fit_ngboost, predict_dist
from .trees import RegressionTree, TreeParams, best_split, fit_tree, predict_tree

__version__ = "0.1.0"

__all__ = [
    "LogColumnSpec",
    "LogTable",
    "clean",
    "kfold_split",
    "load_table",
    "split_holdout",
    "summarize",
    "transform_resistivity",
    "BoostParams",
    "fit_gbdt",
    "fit_random_forest",
    "fit_second_order_boost",
    "predict_ensemble",
    "cross_validated_search",
    "grid_search",
    "interval_coverage",
    "regression_metrics",
    "variance_flags",
    "explain_rows",
    "mean_abs_importance",
    "shap_values",
    "subset_expectation",
    "ModelFile",
    "fit_model",
    "NormalParams",
    "confidence_interval",
    "fit_ngboost",
    "predict_dist",
    "RegressionTree",
    "TreeParams",
    "best_split",
    "fit_tree",
    "predict_tree",
]
