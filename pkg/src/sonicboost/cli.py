"""Command-line entry point.

Exit codes: 0 success, 2 configuration or schema error, 3 data error,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .config import load_config
from .errors import SonicBoostError

COMMANDS = ("stats", "clean", "tune", "train", "predict", "evaluate", "explain", "report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sonicboost",
        description="Probabilistic sonic-log reconstruction with tree ensembles and Shapley explanations.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--target", help="DTC or DTS")
        p.add_argument("--family", help="random_forest | gbdt | second_order | ngboost")
        p.add_argument("--model", dest="model_path", help="model file path")
        p.add_argument("--seed", type=int)
        p.add_argument("--level", type=float, help="central interval probability (default 0.8)")
        p.add_argument("--out", dest="out_dir", help="output directory")
        p.add_argument("--input", help="input table (overrides the configured file)")
        p.add_argument("--labels", help="row-aligned label table for --input")
    return parser


def _summary(command: str, result) -> str:
    if command == "train":
        m = result.metrics["train"]
        return f"trained {result.family} for {result.target}: train R2 {m['r2']:.4f}, RMSE {m['rmse']:.4f}"
    if command == "predict":
        return f"predicted {len(result['depth_index'])} rows"
    if command == "evaluate":
        m = result["metrics"]
        line = f"R2 {m['r2']:.4f}, RMSE {m['rmse']:.4f}, MAE {m['mae']:.4f}"
        for c in result.get("coverage", []):
            line += f"; coverage@{c['level']:g} {c['fraction']:.3f}"
        return line
    if command == "tune":
        return f"best {json.dumps(result['best_params'], sort_keys=True)} (validation R2 {result['best_score']:.4f})"
    if command == "explain":
        top = next(iter(result["importance"]))
        return f"explained {result['rows']} rows; most important feature {top}"
    if command == "stats":
        c = result["cleaning"]
        return f"{c['rows_out']} rows kept of {c['rows_in']}"
    if command == "clean":
        return f"wrote {result['output']}"
    return f"report covers {len(result['windows'])} window(s)"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(
            args.config,
            target=args.target,
            family=args.family,
            model_path=args.model_path,
            seed=args.seed,
            level=args.level,
            out_dir=args.out_dir,
            input=args.input,
            labels=args.labels,
        )
        result = getattr(pipeline, f"run_{args.command}")(cfg)
    except SonicBoostError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the invariant exit code
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4
    print(_summary(args.command, result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
