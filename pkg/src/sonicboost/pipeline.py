"""Command implementations shared by the CLI and the tests.

Each ``run_*`` function reads what it needs from a :class:`RunConfig`,
writes its artifacts under ``cfg.out_dir`` and returns the in-memory result.
"""

from __future__ import annotations

import csv
import logging
import time
from pathlib import Path

import numpy as np

from . import dataio
from .config import RunConfig
from .dataio import DEPTH, FEATURE, LogColumnSpec, LogTable, competition_schema
from .errors import ConfigError, DataError, EmptyInputError, InvariantError, SchemaError
from .evaluation import cross_validated_search, grid_search, interval_coverage, regression_metrics, variance_flags
from .explain import (
    baseline_summary,
    beeswarm_export,
    dependence_export,
    explain_rows,
    mean_abs_importance,
    write_records,
)
from .models import ModelFile, fit_model, is_probabilistic
from .ngboost import NormalParams, confidence_interval, predict_dist

log = logging.getLogger(__name__)


def _read_header(path: Path) -> list[str]:
    if path is None:
        raise ConfigError("no input file configured")
    if not Path(path).exists():
        raise DataError(f"file not found: {path}")
    with open(path, newline="") as fh:
        row = next(csv.reader(fh), None)
    if row is None:
        raise DataError(f"{path}: no header row")
    return [h.strip() for h in row]


def _schema(cfg: RunConfig, header: list[str], required, optional, depth: bool = True) -> list[LogColumnSpec]:
    """Declared columns for a file: ``required`` must exist, ``optional`` are taken if present."""
    known = {c.name: c for c in competition_schema(cfg.columns)}
    cols = []
    for name in [*required, *optional]:
        if any(c.name == name for c in cols):
            continue
        spec = known.get(name) or LogColumnSpec(name, "", FEATURE, cfg.columns.get(name))
        if spec.header not in header:
            if name in required:
                raise SchemaError(f"column {spec.header!r} (for {name}) missing from input")
            continue
        cols.append(spec)
    if cfg.depth_column and depth:
        if cfg.depth_column not in header:
            raise SchemaError(f"depth column {cfg.depth_column!r} missing from input")
        cols.append(LogColumnSpec("depth", "", DEPTH, cfg.depth_column))
    return cols


def load_clean(cfg: RunConfig, path: Path, labels: Path | None, required, optional=(), transform=None):
    """Load (and optionally label-join), clean and log-transform one table."""
    header = _read_header(path)
    label_header = _read_header(labels) if labels else []
    main_req = [n for n in required if _header_of(cfg, n) in header or not labels]
    main_opt = [n for n in optional if _header_of(cfg, n) in header]
    table = dataio.load_table(path, _schema(cfg, header, main_req, main_opt))
    if labels:
        lab_req = [n for n in required if n not in main_req]
        lab_opt = [n for n in optional if n not in main_opt and _header_of(cfg, n) in label_header]
        lab_cols = _schema(cfg, label_header, lab_req, lab_opt, depth=False)
        if lab_cols:
            lab = dataio.load_table(labels, lab_cols)
            if lab.n_rows != table.n_rows:
                raise DataError(f"{labels} has {lab.n_rows} rows but {path} has {table.n_rows}")
            table = table.with_columns(lab)
    table, report = dataio.clean(table, cfg.sentinels)
    if report.empty:
        raise EmptyInputError(f"{path}: empty table after cleaning ({report.rows_in} rows in)")
    tcols = cfg.resistivity if transform is None else transform
    tcols = [c for c in tcols if c in table.names]
    if tcols:
        table = dataio.transform_resistivity(table, tcols, cfg.epsilon)
    return table, report


def _header_of(cfg: RunConfig, name: str) -> str:
    return cfg.columns.get(name, name)


def feature_names(cfg: RunConfig) -> list[str]:
    return ["log" + f if f in cfg.resistivity else f for f in cfg.features]


def _check_hygiene(features, target, sibling):
    bad = {target, sibling} & set(features)
    if bad:
        raise InvariantError(f"slowness logs present in feature schema: {', '.join(sorted(bad))}")


def _training_table(cfg: RunConfig):
    if cfg.train is None:
        raise ConfigError("no training file configured ([data] train)")
    optional = [cfg.sibling] if cfg.clean_all_columns else []
    return load_clean(cfg, cfg.train, None, [*cfg.features, cfg.target], optional)


def _eval_path(cfg: RunConfig):
    """Input/labels pair for predict/evaluate/explain: explicit input, else the test set."""
    if cfg.input is not None:
        return cfg.input, cfg.labels
    if cfg.test is not None:
        return cfg.test, cfg.test_labels
    raise ConfigError("no input file configured (--input or [data] test)")


def run_stats(cfg: RunConfig, path: Path | None = None) -> dict:
    """Cleaning report and summary statistics for every log present."""
    path = path or cfg.input or cfg.train
    start = time.perf_counter()
    header = _read_header(path)
    names = [n for n in (*dataio.INPUT_LOGS, *dataio.TARGET_LOGS) if _header_of(cfg, n) in header]
    table, report = load_clean(cfg, path, None, names)
    stats = dataio.summarize(table)
    result = {
        "source": str(path),
        "cleaning": report.to_dict(),
        "summary": stats.to_dict(),
        "seconds": round(time.perf_counter() - start, 3),
    }
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    dataio.write_json(result, cfg.out_dir / "stats.json")
    return result


def run_clean(cfg: RunConfig, path: Path | None = None) -> dict:
    path = path or cfg.input or cfg.train
    header = _read_header(path)
    names = [n for n in (*dataio.INPUT_LOGS, *dataio.TARGET_LOGS) if _header_of(cfg, n) in header]
    table, report = load_clean(cfg, path, None, names)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    out = cfg.out_dir / f"{Path(path).stem}_clean.csv"
    table.to_csv(out)
    result = {"source": str(path), "output": str(out), "cleaning": report.to_dict()}
    dataio.write_json(result, cfg.out_dir / "cleaning.json")
    return result


def run_tune(cfg: RunConfig) -> dict:
    table, _ = _training_table(cfg)
    feats = feature_names(cfg)
    out = {"family": cfg.family, "target": cfg.target, "seed": cfg.seed}
    if cfg.folds:
        splits = dataio.kfold_split(table, cfg.folds, cfg.seed)
        result = cross_validated_search(splits, cfg.grid, cfg.target, cfg.family, feats, cfg.params)
        out.update(folds=cfg.folds, n_rows=table.n_rows)
    else:
        train, valid = dataio.split_holdout(table, cfg.holdout, cfg.seed)
        result = grid_search(train, valid, cfg.grid, cfg.target, cfg.family, feats, cfg.params)
        out.update(holdout=cfg.holdout, n_train=train.n_rows, n_valid=valid.n_rows)
    out.update(result.to_dict())
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    dataio.write_json(out, cfg.out_dir / f"tune_{cfg.target}_{cfg.family}.json")
    return out


def run_train(cfg: RunConfig) -> ModelFile:
    table, report = _training_table(cfg)
    feats = feature_names(cfg)
    _check_hygiene(feats, cfg.target, cfg.sibling)
    X, y = table.matrix(feats), table.column(cfg.target)
    model = fit_model(cfg.family, X, y, cfg.params)
    fitted = model.predict(X)
    raw = [table.spec(f) for f in feats]
    mf = ModelFile(
        family=cfg.family,
        target=cfg.target,
        features=feats,
        schema=[{"name": c.name, "unit": c.unit, "kind": c.kind, "source": c.source} for c in raw],
        transform={
            "kind": "natural_log",
            "columns": [c for c in cfg.resistivity if c in cfg.features],
            "epsilon": cfg.epsilon,
        },
        params=cfg.params.to_dict(),
        seed=cfg.seed,
        model=model,
        sentinels=list(cfg.sentinels),
        metrics={"train": regression_metrics(y, fitted).to_dict(), "rows": table.n_rows,
                 "cleaning": report.to_dict()},
    )
    path = cfg.resolved_model_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    mf.save(path)
    reloaded = ModelFile.load(path).model.predict(X)
    if not np.array_equal(reloaded, fitted):
        raise InvariantError("reloaded model does not reproduce training predictions")
    return mf


def _raw_feature_names(mf: ModelFile) -> list[str]:
    tcols = set(mf.transform.get("columns", []))
    raw = []
    for f in mf.features:
        raw.append(f[3:] if f.startswith("log") and f[3:] in tcols else f)
    return raw


def load_for_model(cfg: RunConfig, mf: ModelFile, with_target: bool):
    """Input table prepared exactly as at training time (same transform and epsilon)."""
    path, labels = _eval_path(cfg)
    raw = _raw_feature_names(mf)
    sibling = "DTS" if mf.target == "DTC" else "DTC"
    _check_hygiene(mf.features, mf.target, sibling)
    header = _read_header(path)
    missing = [f for f in raw if _header_of(cfg, f) not in header]
    if missing:
        raise SchemaError(
            f"input {path} lacks model feature columns: {', '.join(missing)} "
            f"(model expects {', '.join(mf.features)})"
        )
    required = raw + ([mf.target] if with_target else [])
    sub = RunConfig(**{**cfg.__dict__, "epsilon": float(mf.transform.get("epsilon", cfg.epsilon))})
    sub.sentinels = tuple(mf.sentinels) or cfg.sentinels
    table, report = load_clean(sub, path, labels, required, transform=mf.transform.get("columns", []))
    return table, report


def predict_table(mf: ModelFile, table: LogTable, level: float) -> dict:
    X = table.matrix(mf.features)
    out = {"depth_index": table.depth_index}
    if is_probabilistic(mf.model):
        dist = predict_dist(mf.model, X)
        lo, hi = confidence_interval(dist, level)
        out.update(mu=np.asarray(dist.mu), sigma=np.asarray(dist.sigma), ci_lo=lo, ci_hi=hi)
    else:
        out["mu"] = mf.model.predict(X)
    return out


def write_predictions(pred: dict, path: Path) -> None:
    cols = [c for c in ("depth_index", "mu", "sigma", "ci_lo", "ci_hi") if c in pred]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for i in range(len(pred["depth_index"])):
            w.writerow([int(pred["depth_index"][i])] + [repr(float(pred[c][i])) for c in cols[1:]])


def read_predictions(path: Path) -> dict:
    if not Path(path).exists():
        raise DataError(f"predictions file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty predictions file")
    header, body = rows[0], rows[1:]
    if "depth_index" not in header or "mu" not in header:
        raise SchemaError(f"{path}: predictions need depth_index and mu columns")
    cols = {h: np.array([float(r[i]) for r in body]) for i, h in enumerate(header)}
    cols["depth_index"] = cols["depth_index"].astype(np.int64)
    return cols


def run_predict(cfg: RunConfig) -> dict:
    mf = ModelFile.load(cfg.resolved_model_path())
    table, _ = load_for_model(cfg, mf, with_target=False)
    pred = predict_table(mf, table, cfg.level)
    path = cfg.resolved_predictions()
    path.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(pred, path)
    return pred


def run_evaluate(cfg: RunConfig) -> dict:
    mf = ModelFile.load(cfg.resolved_model_path())
    table, report = load_for_model(cfg, mf, with_target=True)
    y = table.column(mf.target)
    pred = predict_table(mf, table, cfg.level)
    result = {
        "family": mf.family,
        "target": mf.target,
        "rows": table.n_rows,
        "cleaning": report.to_dict(),
        "metrics": regression_metrics(y, pred["mu"]).to_dict(),
    }
    if "sigma" in pred:
        sigma = pred["sigma"]
        dist = NormalParams(pred["mu"], np.log(sigma))
        coverage = []
        for level in sorted({cfg.level, *cfg.levels}):
            coverage.append(interval_coverage(y, confidence_interval(dist, level), level).to_dict())
        result["coverage"] = coverage
        result["flags"] = variance_flags(sigma, table.depth_index, cfg.flag_k).to_dict()
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    dataio.write_json(result, cfg.out_dir / f"evaluation_{mf.target}_{mf.family}.json")
    return result


def _resolve_feature(name: str, features: list[str]) -> str:
    if name in features:
        return name
    if "log" + name in features:
        return "log" + name
    raise SchemaError(f"unknown feature {name!r}; model features: {', '.join(features)}")


def run_explain(cfg: RunConfig) -> dict:
    mf = ModelFile.load(cfg.resolved_model_path())
    table, _ = load_for_model(cfg, mf, with_target=False)
    if cfg.explain_max_rows and table.n_rows > cfg.explain_max_rows:
        picks = np.unique(np.linspace(0, table.n_rows - 1, int(cfg.explain_max_rows)).round().astype(int))
        table = table.take(picks)
    feats = list(mf.features)
    X = table.matrix(feats)
    attributions = explain_rows(mf.model, X)
    out_dir = cfg.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{mf.target}_{mf.family}"
    importance = mean_abs_importance(attributions, feats)
    write_records(
        out_dir / f"importance_{stem}.csv",
        [{"feature": f, "mean_abs_shap": v} for f, v in importance.items()],
        ["feature", "mean_abs_shap"],
    )
    write_records(
        out_dir / f"beeswarm_{stem}.csv",
        beeswarm_export(attributions, X, feats, table.depth_index),
        ["feature", "depth_index", "shap", "value"],
    )
    pairs = cfg.pairs or tuple(("CAL", f) for f in cfg.features if f != "CAL")
    dep_files = []
    for a, b in pairs:
        fa, fb = _resolve_feature(a, feats), _resolve_feature(b, feats)
        recs = dependence_export(fa, fb, attributions, X, feats, table.depth_index)
        path = out_dir / f"dependence_{stem}_{fa}_{fb}.csv"
        write_records(path, recs, ["depth_index", "value_a", "value_b", "shap_a"])
        dep_files.append(str(path))
    worst = max(abs(a.phi0 + float(np.sum(a.phis)) - a.fx) for a in attributions)
    if worst > 1e-6:
        raise InvariantError(f"local accuracy violated by {worst:g}")
    meta = {
        "rows": table.n_rows,
        "features": feats,
        "importance": dict(importance.items()),
        "baseline": baseline_summary(attributions),
        "max_local_accuracy_error": worst,
        "dependence_files": dep_files,
    }
    dataio.write_json(meta, out_dir / f"explain_{stem}.json")
    return meta


def run_report(cfg: RunConfig) -> dict:
    """Per-window interval coverage and variance flags from a predictions file.

    Labels are optional; without them the report lists bands and flags only.
    """
    pred = read_predictions(cfg.resolved_predictions())
    depth = pred["depth_index"]
    has_sigma = "sigma" in pred
    flags = variance_flags(pred["sigma"], depth, cfg.flag_k) if has_sigma else None
    flagged = set(flags.flagged_indices) if flags else set()

    y = None
    table = None
    if cfg.input is not None or cfg.test is not None:
        try:
            path, labels = _eval_path(cfg)
            header = _read_header(path)
            label_header = _read_header(labels) if labels else []
            if _header_of(cfg, cfg.target) in header + label_header:
                opt = [n for n in (*dataio.INPUT_LOGS,) if _header_of(cfg, n) in header]
                table, _ = load_clean(cfg, path, labels, [cfg.target], opt, transform=[])
        except (DataError, SchemaError, ConfigError) as exc:
            log.warning("labels unavailable for report: %s", exc)
    if table is not None:
        lookup = dict(zip(table.depth_index.tolist(), table.column(cfg.target).tolist()))
        y = np.array([lookup.get(int(d), np.nan) for d in depth])

    windows = list(cfg.windows) or [(int(depth.min()), int(depth.max()))]
    sections = []
    for lo, hi in windows:
        sel = (depth >= lo) & (depth <= hi)
        sec = {"window": [lo, hi], "rows": int(sel.sum())}
        if has_sigma and sel.any():
            s = pred["sigma"][sel]
            sec["sigma_mean"] = float(s.mean())
            sec["sigma_std"] = float(s.std())
            sec["flags"] = sorted(int(d) for d in depth[sel] if int(d) in flagged)
            sec["n_flags"] = len(sec["flags"])
        if y is not None and has_sigma:
            ok = sel & np.isfinite(y)
            if ok.any():
                cov = interval_coverage(y[ok], (pred["ci_lo"][ok], pred["ci_hi"][ok]), cfg.level)
                sec["coverage"] = cov.to_dict()
        if table is not None and sel.any():
            sec["window_logs"] = _export_window(cfg, table, pred, lo, hi)
        sections.append(sec)

    result = {
        "predictions": str(cfg.resolved_predictions()),
        "target": cfg.target,
        "level": cfg.level,
        "labels": y is not None,
        "flags": flags.to_dict() if flags else None,
        "windows": sections,
    }
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    dataio.write_json(result, cfg.out_dir / f"report_{cfg.target}.json")
    (cfg.out_dir / f"report_{cfg.target}.txt").write_text(_report_text(result))
    if cfg.plots:
        from .plots import plot_windows

        result["plots"] = plot_windows(pred, y, flagged, windows, cfg.out_dir, cfg.target, cfg.level)
    return result


def _export_window(cfg, table: LogTable, pred: dict, lo: int, hi: int) -> str:
    """Input logs, labels and predictions for one depth window as CSV."""
    win = table.window(lo, hi)
    by_depth = {int(d): i for i, d in enumerate(pred["depth_index"])}
    cols = [c for c in ("mu", "sigma", "ci_lo", "ci_hi") if c in pred]
    path = cfg.out_dir / f"window_{cfg.target}_{lo}_{hi}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["depth_index", *win.names, *cols])
        for i, d in enumerate(win.depth_index):
            j = by_depth.get(int(d))
            extra = [repr(float(pred[c][j])) if j is not None else "" for c in cols]
            w.writerow([int(d), *(repr(float(win.data[n][i])) for n in win.names), *extra])
    return str(path)


def _report_text(result: dict) -> str:
    lines = [f"Prediction report for {result['target']} ({result['predictions']})"]
    flags = result["flags"]
    if flags:
        lines.append(f"variance flags: {flags['n_flagged']} of {flags['evaluated']} rows ({flags['rule']}, "
                     f"threshold {flags['threshold']:.4g})")
    for sec in result["windows"]:
        lo, hi = sec["window"]
        parts = [f"depth {lo}-{hi}: {sec['rows']} rows"]
        if "coverage" in sec:
            c = sec["coverage"]
            parts.append(f"{c['level']:.0%} interval coverage {c['fraction']:.3f} ({c['covered']}/{c['total']})")
        if "n_flags" in sec:
            parts.append(f"{sec['n_flags']} flagged, mean sigma {sec['sigma_mean']:.4g}")
        lines.append("; ".join(parts))
    return "\n".join(lines) + "\n"
