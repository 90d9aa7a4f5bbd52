"""Model families and the versioned JSON model file."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .ensembles import (
    BoostParams,
    ForestModel,
    GbdtModel,
    fit_gbdt,
    fit_random_forest,
    fit_second_order_boost,
)
from .errors import ConfigError, ModelFormatError, VersionError
from .ngboost import NGBoostModel, fit_ngboost

FORMAT_VERSION = 1

FITTERS = {
    "random_forest": fit_random_forest,
    "gbdt": fit_gbdt,
    "second_order": fit_second_order_boost,
    "ngboost": fit_ngboost,
}
ALIASES = {"rf": "random_forest", "xgboost": "second_order", "ngb": "ngboost"}

_LOADERS = {
    "random_forest": ForestModel.from_dict,
    "gbdt": GbdtModel.from_dict,
    "second_order": GbdtModel.from_dict,
    "ngboost": NGBoostModel.from_dict,
}


def canonical_family(name: str) -> str:
    key = str(name).strip().lower().replace("-", "_")
    key = ALIASES.get(key, key)
    if key not in FITTERS:
        raise ConfigError(f"unknown model family {name!r}; choose from {', '.join(sorted(FITTERS))}")
    return key


def fit_model(family: str, features, targets, params: BoostParams):
    return FITTERS[canonical_family(family)](features, targets, params)


def is_probabilistic(model) -> bool:
    return getattr(model, "probabilistic", False)


@dataclass
class ModelFile:
    family: str
    target: str
    features: list[str]
    schema: list[dict]
    transform: dict
    params: dict
    seed: int
    model: object
    sentinels: list[float] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "family": self.family,
            "target": self.target,
            "features": list(self.features),
            "schema": self.schema,
            "transform": self.transform,
            "sentinels": list(self.sentinels),
            "params": self.params,
            "seed": int(self.seed),
            "metrics": self.metrics,
            "model": self.model.to_dict(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> ModelFile:
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"model file is not valid JSON: {exc}") from None
        if not isinstance(d, dict) or "format_version" not in d:
            raise ModelFormatError("model file lacks a format_version")
        if d["format_version"] != FORMAT_VERSION:
            raise VersionError(
                f"unsupported model format_version {d['format_version']!r}; this build reads {FORMAT_VERSION}"
            )
        family = d.get("family")
        if family not in _LOADERS:
            raise ModelFormatError(f"unknown model family {family!r} in model file")
        try:
            return cls(
                family=family,
                target=d["target"],
                features=list(d["features"]),
                schema=list(d["schema"]),
                transform=dict(d["transform"]),
                params=dict(d["params"]),
                seed=int(d["seed"]),
                model=_LOADERS[family](d["model"]),
                sentinels=list(d.get("sentinels", [])),
                metrics=dict(d.get("metrics", {})),
            )
        except KeyError as exc:
            raise ModelFormatError(f"model file missing field {exc}") from None

    @classmethod
    def load(cls, path) -> ModelFile:
        path = Path(path)
        if not path.exists():
            raise ModelFormatError(f"model file not found: {path}")
        return cls.loads(path.read_text())
