"""Run configuration: TOML file plus command-line overrides.

Example::

    [data]
    train = "data/train.csv"
    test = "data/test.csv"
    test_labels = "data/real_test_result.csv"
    sentinels = [-999, -999.25, -9999]

    [model]
    target = "DTC"
    family = "ngboost"
    preset = "tuned"        # grid-searched settings per family and target

    [output]
    dir = "out"
    level = 0.8
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dataio import DEFAULT_EPSILON, DEFAULT_SENTINELS, INPUT_LOGS, RESISTIVITY_LOGS, TARGET_LOGS
from .ensembles import BoostParams
from .errors import ConfigError, InvalidArgumentError
from .models import canonical_family
from .trees import TreeParams

# (learning_rate, max_depth, n_estimators) selected for each family and target
TUNED_HYPERPARAMS = {
    ("DTC", "random_forest"): (0.2, 4, 101),
    ("DTC", "gbdt"): (0.1, 4, 81),
    ("DTC", "second_order"): (0.2, 4, 302),
    ("DTC", "ngboost"): (0.04, 4, 489),
    ("DTS", "random_forest"): (0.2, 4, 98),
    ("DTS", "gbdt"): (0.1, 4, 51),
    ("DTS", "second_order"): (0.2, 4, 487),
    ("DTS", "ngboost"): (0.04, 4, 500),
}

DEFAULT_GRID = {
    "learning_rate": [0.01, 0.04, 0.1, 0.2, 0.5],
    "max_depth": [2, 4, 6, 8],
    "n_estimators": [50, 100, 200, 300, 400, 500],
}

_SECTIONS = {
    "data": {"train", "test", "test_labels", "input", "labels", "depth_column", "sentinels",
             "resistivity", "epsilon", "clean_all_columns"},
    "columns": None,
    "model": {"target", "family", "preset", "learning_rate", "max_depth", "n_estimators",
              "min_samples_leaf", "feature_subsample", "reg_lambda", "gamma", "seed", "features", "path"},
    "tune": {"learning_rate", "max_depth", "n_estimators", "holdout", "folds"},
    "output": {"dir", "level", "levels", "flag_k", "predictions"},
    "explain": {"pairs", "max_rows"},
    "report": {"windows", "plots"},
}


@dataclass
class RunConfig:
    train: Optional[Path] = None
    test: Optional[Path] = None
    test_labels: Optional[Path] = None
    input: Optional[Path] = None
    labels: Optional[Path] = None
    columns: dict = field(default_factory=dict)
    depth_column: Optional[str] = None
    sentinels: tuple = DEFAULT_SENTINELS
    resistivity: tuple = RESISTIVITY_LOGS
    epsilon: float = DEFAULT_EPSILON
    clean_all_columns: bool = True
    target: str = "DTC"
    family: str = "ngboost"
    features: tuple = INPUT_LOGS
    params: BoostParams = field(default_factory=lambda: BoostParams(489, 0.04, TreeParams(4)))
    grid: dict = field(default_factory=lambda: dict(DEFAULT_GRID))
    holdout: float = 0.2
    # 0 selects the single holdout; k >= 2 averages over k seeded folds
    folds: int = 0
    seed: int = 0
    model_path: Optional[Path] = None
    out_dir: Path = Path("out")
    predictions: Optional[Path] = None
    level: float = 0.8
    levels: tuple = (0.8, 0.9)
    flag_k: float = 1.5
    pairs: tuple = ()
    explain_max_rows: Optional[int] = None
    windows: tuple = ()
    plots: bool = False

    @property
    def sibling(self) -> str:
        return TARGET_LOGS[1 - TARGET_LOGS.index(self.target)]

    def resolved_model_path(self) -> Path:
        return self.model_path or self.out_dir / f"model_{self.target}_{self.family}.json"

    def resolved_predictions(self) -> Path:
        return self.predictions or self.out_dir / f"predictions_{self.target}.csv"

    def validate(self) -> RunConfig:
        if self.target not in TARGET_LOGS:
            raise ConfigError(f"target must be one of {', '.join(TARGET_LOGS)}, got {self.target!r}")
        self.family = canonical_family(self.family)
        bad = {self.target, self.sibling} & set(self.features)
        if bad:
            raise ConfigError(f"slowness logs cannot be features: {', '.join(sorted(bad))}")
        if not 0 <= self.level < 1:
            raise ConfigError("level must lie in [0, 1)")
        if not 0 < self.holdout < 1:
            raise ConfigError("holdout fraction must lie in (0, 1)")
        if self.folds == 1 or self.folds < 0:
            raise ConfigError("folds must be 0 (holdout) or at least 2")
        return self


def _paths(d: dict, key: str, base: Path):
    v = d.get(key)
    if v in (None, ""):
        return None
    p = Path(v)
    return p if p.is_absolute() else base / p


def load_config(path=None, **overrides) -> RunConfig:
    """Build a RunConfig from a TOML file (optional) and keyword overrides.

    Relative paths in the file resolve against the file's directory.
    Overrides with value None are ignored.
    """
    raw: dict = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        base = path.parent
    for section, body in raw.items():
        if section not in _SECTIONS or not isinstance(body, dict):
            raise ConfigError(f"unknown config section [{section}]")
        allowed = _SECTIONS[section]
        if allowed is not None:
            unknown = set(body) - allowed
            if unknown:
                raise ConfigError(f"unknown keys in [{section}]: {', '.join(sorted(unknown))}")

    data, model, tune = raw.get("data", {}), raw.get("model", {}), raw.get("tune", {})
    output, explain, report = raw.get("output", {}), raw.get("explain", {}), raw.get("report", {})
    cfg = RunConfig()
    cfg.train = _paths(data, "train", base)
    cfg.test = _paths(data, "test", base)
    cfg.test_labels = _paths(data, "test_labels", base)
    cfg.input = _paths(data, "input", base)
    cfg.labels = _paths(data, "labels", base)
    cfg.columns = {str(k): str(v) for k, v in raw.get("columns", {}).items()}
    cfg.depth_column = data.get("depth_column") or None
    cfg.sentinels = tuple(float(s) for s in data.get("sentinels", DEFAULT_SENTINELS))
    cfg.resistivity = tuple(data.get("resistivity", RESISTIVITY_LOGS))
    cfg.epsilon = float(data.get("epsilon", DEFAULT_EPSILON))
    cfg.clean_all_columns = bool(data.get("clean_all_columns", True))
    cfg.target = str(model.get("target", cfg.target)).upper()
    cfg.family = str(model.get("family", cfg.family))
    cfg.features = tuple(model.get("features", INPUT_LOGS))
    cfg.seed = int(model.get("seed", 0))
    cfg.model_path = _paths(model, "path", base)
    cfg.holdout = float(tune.get("holdout", 0.2))
    cfg.folds = int(tune.get("folds", 0))
    cfg.grid = {k: list(tune.get(k, v)) for k, v in DEFAULT_GRID.items()}
    out_dir = output.get("dir", "out")
    cfg.out_dir = Path(out_dir) if Path(out_dir).is_absolute() else base / out_dir
    cfg.predictions = _paths(output, "predictions", base)
    cfg.level = float(output.get("level", 0.8))
    cfg.levels = tuple(float(v) for v in output.get("levels", (0.8, 0.9)))
    cfg.flag_k = float(output.get("flag_k", 1.5))
    cfg.pairs = tuple(tuple(p) for p in explain.get("pairs", ()))
    if any(len(p) != 2 for p in cfg.pairs):
        raise ConfigError("explain pairs must be two-element lists")
    cfg.explain_max_rows = explain.get("max_rows")
    cfg.windows = tuple(tuple(int(v) for v in w) for w in report.get("windows", ()))
    if any(len(w) != 2 or w[0] > w[1] for w in cfg.windows):
        raise ConfigError("report windows must be [lo, hi] pairs with lo <= hi")
    cfg.plots = bool(report.get("plots", False))

    ov = {k: v for k, v in overrides.items() if v is not None}
    for key in ("target", "family", "seed", "level", "input", "labels", "model_path", "out_dir"):
        if key in ov:
            val = ov[key]
            if key in ("input", "labels", "model_path", "out_dir"):
                val = Path(val)
            if key == "target":
                val = str(val).upper()
            setattr(cfg, key, val)
    cfg.validate()
    cfg.params = _boost_params(model, cfg)
    return cfg


def _boost_params(model: dict, cfg: RunConfig) -> BoostParams:
    lr, depth, n_est = 0.1, 4, 100
    preset = model.get("preset", "tuned")
    if preset == "tuned":
        lr, depth, n_est = TUNED_HYPERPARAMS[(cfg.target, cfg.family)]
    elif preset not in ("", "none", None):
        raise ConfigError(f"unknown preset {preset!r}; use 'tuned' or 'none'")
    try:
        tp = TreeParams(
            max_depth=int(model.get("max_depth", depth)),
            min_samples_leaf=int(model.get("min_samples_leaf", 1)),
            feature_subsample=model.get("feature_subsample"),
            seed=cfg.seed,
        )
        return BoostParams(
            n_estimators=int(model.get("n_estimators", n_est)),
            learning_rate=float(model.get("learning_rate", lr)),
            tree_params=tp,
            reg_lambda=float(model.get("reg_lambda", 1.0)),
            gamma=float(model.get("gamma", 0.0)),
        )
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from None


def with_params(cfg: RunConfig, params: BoostParams) -> RunConfig:
    return replace(cfg, params=params)
