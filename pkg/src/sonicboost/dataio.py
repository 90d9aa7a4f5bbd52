"""Loading, cleaning, transforming and summarizing well-log tables.

A :class:`LogTable` is an immutable set of named numeric columns sharing a
depth index. The competition files carry no depth column, so by default the
depth index is the 0-based row position in the source file; rows removed by
cleaning keep their original index, which leaves gaps.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, EmptyInputError, InvalidArgumentError, ParseError, SchemaError

FEATURE = "feature"
TARGET = "target"
DEPTH = "depth-index"
KINDS = (FEATURE, TARGET, DEPTH)

DEFAULT_SENTINELS = (-999.0, -999.25, -9999.0)
DEFAULT_EPSILON = 1e-6

INPUT_LOGS = ("CAL", "CNC", "GR", "HRD", "HRM", "PE", "ZDEN")
TARGET_LOGS = ("DTC", "DTS")
RESISTIVITY_LOGS = ("HRD", "HRM")

_UNITS = {
    "CAL": "in",
    "CNC": "v/v",
    "GR": "API",
    "HRD": "ohm.m",
    "HRM": "ohm.m",
    "PE": "b/e",
    "ZDEN": "g/cm3",
    "DTC": "us/ft",
    "DTS": "us/ft",
}


@dataclass(frozen=True)
class LogColumnSpec:
    """One declared column. ``source`` is the header label in the file."""

    name: str
    unit: str = ""
    kind: str = FEATURE
    source: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")

    @property
    def header(self) -> str:
        return self.source or self.name


def competition_schema(mapping: dict[str, str] | None = None) -> list[LogColumnSpec]:
    """The seven input logs plus DTC/DTS, optionally renamed via ``mapping``."""
    mapping = mapping or {}
    cols = [LogColumnSpec(n, _UNITS[n], FEATURE, mapping.get(n)) for n in INPUT_LOGS]
    cols += [LogColumnSpec(n, _UNITS[n], TARGET, mapping.get(n)) for n in TARGET_LOGS]
    return cols


def _check_schema(schema: Sequence[LogColumnSpec]):
    names = [c.name for c in schema]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise SchemaError(f"duplicate column names: {', '.join(dupes)}")
    if sum(c.kind == DEPTH for c in schema) > 1:
        raise SchemaError("at most one depth-index column may be declared")


@dataclass(frozen=True)
class LogTable:
    columns: tuple[LogColumnSpec, ...]
    data: dict[str, np.ndarray]
    depth_index: np.ndarray

    def __post_init__(self):
        n = len(self.depth_index)
        for c in self.columns:
            if c.name not in self.data:
                raise SchemaError(f"column {c.name!r} has no data")
            if len(self.data[c.name]) != n:
                raise InvalidArgumentError(f"column {c.name!r} length differs from depth index")
        if n > 1 and np.any(np.diff(self.depth_index) <= 0):
            raise InvalidArgumentError("depth index must be strictly increasing")
        for arr in (*self.data.values(), self.depth_index):
            arr.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return len(self.depth_index)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def spec(self, name: str) -> LogColumnSpec:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"column {name!r} not found; available: {', '.join(self.names)}")

    def column(self, name: str) -> np.ndarray:
        self.spec(name)
        return self.data[name]

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        if not names:
            return np.empty((self.n_rows, 0))
        return np.column_stack([self.column(n) for n in names]).astype(float)

    def names_of_kind(self, kind: str) -> list[str]:
        return [c.name for c in self.columns if c.kind == kind]

    def take(self, rows) -> LogTable:
        """Subset of rows (boolean mask or sorted integer positions)."""
        rows = np.asarray(rows)
        return LogTable(
            self.columns,
            {k: v[rows].copy() for k, v in self.data.items()},
            self.depth_index[rows].copy(),
        )

    def select(self, names: Iterable[str]) -> LogTable:
        cols = tuple(self.spec(n) for n in names)
        return LogTable(cols, {c.name: self.data[c.name] for c in cols}, self.depth_index)

    def window(self, lo: int, hi: int) -> LogTable:
        """Rows whose depth index lies in the closed range [lo, hi]."""
        return self.take((self.depth_index >= lo) & (self.depth_index <= hi))

    def with_columns(self, other: LogTable) -> LogTable:
        """Append the columns of a row-aligned table (e.g. separate label file)."""
        if other.n_rows != self.n_rows:
            raise InvalidArgumentError(
                f"cannot join tables with {self.n_rows} and {other.n_rows} rows"
            )
        clash = set(self.names) & set(other.names)
        if clash:
            raise SchemaError(f"columns present in both tables: {', '.join(sorted(clash))}")
        data = dict(self.data)
        data.update(other.data)
        return LogTable(self.columns + other.columns, data, self.depth_index)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["depth_index", *self.names])
            cols = [self.data[n] for n in self.names]
            for i, d in enumerate(self.depth_index):
                w.writerow([int(d), *(repr(float(c[i])) for c in cols)])


def _parse_cell(text: str, row: int, column: str) -> float:
    text = text.strip()
    if text == "":
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise ParseError(
            f"row {row}, column {column!r}: cannot parse {text!r} as a number",
            row=row,
            column=column,
        ) from None


def load_table(path, schema: Sequence[LogColumnSpec]) -> LogTable:
    """Read a comma-separated file with a header row.

    Rows are numbered from 1 (first data row) in parse errors. Empty cells
    load as NaN and are removed later by :func:`clean`.
    """
    _check_schema(schema)
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: no header row") from None
        positions = {}
        for c in schema:
            if c.header not in header:
                raise SchemaError(f"{path}: column {c.header!r} missing from header")
            positions[c.name] = header.index(c.header)
        values = {c.name: [] for c in schema}
        for rownum, record in enumerate(reader, start=1):
            if not record or all(not cell.strip() for cell in record):
                continue
            for c in schema:
                pos = positions[c.name]
                cell = record[pos] if pos < len(record) else ""
                values[c.name].append(_parse_cell(cell, rownum, c.header))

    depth_cols = [c for c in schema if c.kind == DEPTH]
    n = len(values[schema[0].name]) if schema else 0
    if depth_cols:
        raw = np.asarray(values[depth_cols[0].name], dtype=float)
        if not np.all(np.isfinite(raw)) or np.any(raw != np.round(raw)):
            raise ParseError(f"{path}: depth-index column must hold integers")
        depth = raw.astype(np.int64)
    else:
        depth = np.arange(n, dtype=np.int64)
    data = {c.name: np.asarray(values[c.name], dtype=float) for c in schema if c.kind != DEPTH}
    cols = tuple(c for c in schema if c.kind != DEPTH)
    return LogTable(cols, data, depth)


@dataclass
class CleaningReport:
    rows_in: int
    rows_out: int
    dropped_by_reason: dict[str, int] = field(default_factory=dict)
    empty: bool = False

    def to_dict(self) -> dict:
        return {
            "rows_in": self.rows_in,
            "rows_out": self.rows_out,
            "dropped_by_reason": dict(self.dropped_by_reason),
            "empty_table": self.empty,
        }


def clean(
    table: LogTable,
    sentinels: Iterable[float] = DEFAULT_SENTINELS,
    positive_columns: Sequence[str] = (),
) -> tuple[LogTable, CleaningReport]:
    """Drop rows holding a non-finite value, a sentinel, or (optionally) a
    nonpositive value in one of ``positive_columns``.

    Each dropped row is charged to the first reason that applies, checked in
    the order non-finite, sentinel, nonpositive-resistivity.
    """
    sentinels = np.asarray(list(sentinels), dtype=float)
    if not np.all(np.isfinite(sentinels)):
        raise InvalidArgumentError("sentinel values must be finite")
    n = table.n_rows
    names = table.names
    if names:
        block = table.matrix(names)
        nonfinite = ~np.all(np.isfinite(block), axis=1)
        sentinel = np.any(np.isin(block, sentinels), axis=1) & ~nonfinite
    else:
        nonfinite = sentinel = np.zeros(n, bool)
    nonpos = np.zeros(n, bool)
    for name in positive_columns:
        with np.errstate(invalid="ignore"):
            nonpos |= table.column(name) <= 0
    nonpos &= ~(nonfinite | sentinel)
    keep = ~(nonfinite | sentinel | nonpos)
    report = CleaningReport(
        rows_in=n,
        rows_out=int(keep.sum()),
        dropped_by_reason={
            "non-finite": int(nonfinite.sum()),
            "sentinel": int(sentinel.sum()),
            "nonpositive-resistivity": int(nonpos.sum()),
        },
    )
    report.empty = report.rows_out == 0
    return table.take(keep), report


def transform_resistivity(
    table: LogTable, columns: Sequence[str] = RESISTIVITY_LOGS, epsilon: float = DEFAULT_EPSILON
) -> LogTable:
    """Replace each named column by ln(max(v, epsilon)), renamed ``log<NAME>``."""
    if not epsilon > 0:
        raise InvalidArgumentError("epsilon must be positive")
    for name in columns:
        table.spec(name)
    data = dict(table.data)
    new_cols = []
    for c in table.columns:
        if c.name in columns:
            new = LogColumnSpec("log" + c.name, f"ln({c.unit})" if c.unit else "ln", c.kind, c.source)
            data.pop(c.name)
            data[new.name] = np.log(np.maximum(table.data[c.name], epsilon))
            new_cols.append(new)
        else:
            new_cols.append(c)
    return LogTable(tuple(new_cols), data, table.depth_index)


STAT_KEYS = ("count", "mean", "std", "min", "q25", "q50", "q75", "max")


@dataclass
class SummaryStats:
    columns: dict[str, dict[str, float]]

    def __getitem__(self, name):
        return self.columns[name]

    def to_dict(self) -> dict:
        out = {}
        for name, stats in self.columns.items():
            out[name] = {
                k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in stats.items()
            }
        return out


def summarize(table: LogTable) -> SummaryStats:
    """Per-column count, mean, sample std, min, type-7 quartiles and max."""
    if table.n_rows == 0:
        raise EmptyInputError("cannot summarize an empty table")
    out = {}
    for name in table.names:
        v = table.data[name]
        q25, q50, q75 = np.percentile(v, [25, 50, 75])
        out[name] = {
            "count": int(v.size),
            "mean": float(np.mean(v)),
            "std": float(np.std(v, ddof=1)) if v.size > 1 else math.nan,
            "min": float(np.min(v)),
            "q25": float(q25),
            "q50": float(q50),
            "q75": float(q75),
            "max": float(np.max(v)),
        }
    return SummaryStats(out)


def split_holdout(table: LogTable, fraction: float = 0.2, seed: int = 0) -> tuple[LogTable, LogTable]:
    """Seeded random holdout; returns (train, validation), each in file order."""
    if not 0 < fraction < 1:
        raise InvalidArgumentError("fraction must lie strictly between 0 and 1")
    n = table.n_rows
    k = int(math.floor(fraction * n + 0.5))
    if n < 2 or k == 0 or k == n:
        raise InvalidArgumentError(f"fraction {fraction} of {n} rows leaves an empty split")
    perm = np.random.default_rng(seed).permutation(n)
    valid = np.zeros(n, bool)
    valid[perm[:k]] = True
    return table.take(~valid), table.take(valid)


def kfold_split(table: LogTable, folds: int, seed: int = 0) -> list[tuple[LogTable, LogTable]]:
    """Seeded k-fold partition; returns one (train, validation) pair per fold."""
    n = table.n_rows
    if folds < 2 or folds > n:
        raise InvalidArgumentError(f"need 2 <= folds <= {n}, got {folds}")
    perm = np.random.default_rng(seed).permutation(n)
    pairs = []
    for part in np.array_split(perm, folds):
        valid = np.zeros(n, bool)
        valid[part] = True
        pairs.append((table.take(~valid), table.take(valid)))
    return pairs


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
