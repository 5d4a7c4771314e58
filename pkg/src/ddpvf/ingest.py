"""Delimited-text ingestion into design matrices.

Schema files are JSON objects::

    {
      "time_column": "time",
      "event_column": "status",
      "time_unit": "days",
      "alpha_covariates": ["age_group"],
      "beta_covariates": ["age_group", "vaccine"],
      "cure_covariates": ["vaccine"],
      "reference_levels": {"age_group": "under35", "vaccine": "no"},
      "delimiter": ","
    }

A column listed in ``reference_levels`` is categorical: every level other
than the reference becomes a 0/1 dummy named ``column[level]``.  Other
covariate columns are parsed as numbers.  An intercept is prepended to every
design row.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .regression import SurvivalData, SurvivalRecord


class IngestError(ValueError):
    """Raised with every row-level diagnostic collected."""

    def __init__(self, message: str, diagnostics: list[str] | None = None):
        self.diagnostics = list(diagnostics or [])
        full = message
        if self.diagnostics:
            full += "\n" + "\n".join(f"  {d}" for d in self.diagnostics)
        super().__init__(full)


SCHEMA_KEYS = {"time_column", "event_column", "time_unit", "alpha_covariates",
               "beta_covariates", "cure_covariates", "reference_levels", "delimiter"}


@dataclass(frozen=True)
class IngestSchema:
    time_column: str
    event_column: str
    alpha_covariates: tuple = ()
    beta_covariates: tuple = ()
    cure_covariates: tuple = ()
    reference_levels: dict = field(default_factory=dict)
    time_unit: str = ""
    delimiter: str = ","

    def __post_init__(self):
        for name in ("alpha_covariates", "beta_covariates", "cure_covariates"):
            value = getattr(self, name)
            if isinstance(value, str) or not all(isinstance(v, str) for v in value):
                raise IngestError(f"schema.{name}: expected a list of column names")
            object.__setattr__(self, name, tuple(value))
        if not isinstance(self.reference_levels, dict):
            raise IngestError("schema.reference_levels: expected a mapping")
        object.__setattr__(self, "reference_levels",
                           {str(k): str(v) for k, v in self.reference_levels.items()})
        if len(self.delimiter) != 1:
            raise IngestError("schema.delimiter: must be a single character")

    @property
    def covariates(self) -> list[str]:
        seen = []
        for col in self.alpha_covariates + self.beta_covariates + self.cure_covariates:
            if col not in seen:
                seen.append(col)
        return seen

    @classmethod
    def from_dict(cls, raw: dict) -> "IngestSchema":
        if not isinstance(raw, dict):
            raise IngestError("schema: expected a JSON object")
        unknown = sorted(set(raw) - SCHEMA_KEYS)
        if unknown:
            raise IngestError(f"schema.{unknown[0]}: unknown key")
        for key in ("time_column", "event_column"):
            if not isinstance(raw.get(key), str):
                raise IngestError(f"schema.{key}: required column name")
        return cls(**raw)

    @classmethod
    def load(cls, path) -> "IngestSchema":
        with open(path, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise IngestError(f"schema {path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw)


@dataclass
class Table:
    header: list
    rows: list  # list of (line_number, list[str])

    def column(self, name: str) -> list[str]:
        j = self.header.index(name)
        return [cells[j] for _, cells in self.rows]


def read_table(path, delimiter: str = ",") -> Table:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError(f"{path}: empty file, header row required") from None
        rows = []
        problems = []
        for cells in reader:
            if not cells or all(not c.strip() for c in cells):
                continue
            if len(cells) != len(header):
                problems.append(f"row {reader.line_num}: expected {len(header)} fields, "
                                f"found {len(cells)}")
                continue
            rows.append((reader.line_num, [c.strip() for c in cells]))
    if len(set(header)) != len(header):
        raise IngestError(f"{path}: duplicate column names in header")
    if problems:
        raise IngestError(f"{path}: malformed rows", problems)
    return Table(header, rows)


@dataclass
class Ingested:
    data: SurvivalData
    table: Table
    schema: IngestSchema
    design_names: dict  # 'alpha'|'beta'|'cure' -> list of column labels

    @property
    def records(self) -> list[SurvivalRecord]:
        return self.data.records()

    def __len__(self):
        return len(self.data)


def _encoders(schema: IngestSchema, table: Table, diagnostics: list):
    """Per covariate: list of (label, function(cell) -> float)."""
    enc = {}
    for col in schema.covariates:
        j = table.header.index(col)
        if col in schema.reference_levels:
            ref = schema.reference_levels[col]
            levels = sorted({cells[j] for _, cells in table.rows if cells[j] != ""})
            if ref not in levels and table.rows:
                diagnostics.append(f"column {col}: reference level {ref!r} not present")
            others = [lv for lv in levels if lv != ref]
            enc[col] = [(f"{col}[{lv}]", (lambda v, lv=lv: 1.0 if v == lv else 0.0))
                        for lv in others]
        else:
            enc[col] = [(col, float)]
    return enc


def ingest(path, schema: IngestSchema) -> Ingested:
    """Parse ``path`` into design matrices following ``schema``.

    Every bad row is reported (by file line number) before failing.
    """
    table = read_table(path, schema.delimiter)
    needed = [schema.time_column, schema.event_column] + schema.covariates
    missing = [c for c in needed if c not in table.header]
    if missing:
        raise IngestError(f"{path}: missing column(s): {', '.join(missing)}")
    if not table.rows:
        raise IngestError(f"{path}: no data rows")

    diagnostics: list[str] = []
    enc = _encoders(schema, table, diagnostics)
    ti, ei = table.header.index(schema.time_column), table.header.index(schema.event_column)
    idx = {c: table.header.index(c) for c in schema.covariates}
    time, event, values = [], [], {c: [] for c in schema.covariates}
    for line, cells in table.rows:
        problems = []
        for c in needed:
            if cells[table.header.index(c)] == "":
                problems.append(f"missing value in {c}")
        if problems:
            diagnostics.append(f"row {line}: " + "; ".join(problems))
            continue
        try:
            t = float(cells[ti])
        except ValueError:
            problems.append(f"unparseable time {cells[ti]!r}")
        else:
            if not (t > 0 and np.isfinite(t)):
                problems.append(f"non-positive or non-finite time {cells[ti]!r}")
        try:
            d = float(cells[ei])
        except ValueError:
            problems.append(f"unparseable event {cells[ei]!r}")
        else:
            if d not in (0.0, 1.0):
                problems.append(f"event {cells[ei]!r} outside {{0, 1}}")
        row_vals = {}
        for c in schema.covariates:
            try:
                row_vals[c] = [fn(cells[idx[c]]) for _, fn in enc[c]]
            except ValueError:
                problems.append(f"unparseable value {cells[idx[c]]!r} in {c}")
        if problems:
            diagnostics.append(f"row {line}: " + "; ".join(problems))
            continue
        time.append(t)
        event.append(d)
        for c in schema.covariates:
            values[c].append(row_vals[c])
    if diagnostics:
        raise IngestError(f"{path}: {len(diagnostics)} problem(s)", diagnostics)

    n = len(time)
    names, mats = {}, {}
    for part, cols in (("alpha", schema.alpha_covariates), ("beta", schema.beta_covariates),
                       ("cure", schema.cure_covariates)):
        blocks = [np.ones((n, 1))]
        labels = ["(intercept)"]
        for c in cols:
            blocks.append(np.array(values[c], dtype=float).reshape(n, -1))
            labels.extend(label for label, _ in enc[c])
        mats[part] = np.hstack(blocks)
        names[part] = labels
    data = SurvivalData(np.array(time), np.array(event), mats["alpha"], mats["beta"],
                        mats["cure"], time_unit=schema.time_unit, column_names=names)
    return Ingested(data, table, schema, names)
