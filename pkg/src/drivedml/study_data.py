"""Tabular data model for per-drive study records.

Drives arrive as CSV rows; a JSON schema declares each column as real,
integer, or categorical. Records are validated against the documented
variable ranges and assembled into role-tagged matrices for the effect
estimation engine.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ValidationError

NDRT_LEVELS = ("Base", "NB0", "NB1", "NB2", "MT1", "MT2", "ST")

INDIVIDUAL_VARS = ("Age", "Gender", "Trust", "DriveE", "DriveD")

SYMBOL_VARS = (
    "PA", "FR", "FT", "SR", "ST", "SA",          # eye tracking
    "SCL", "SCR",                                  # electrodermal
    "HR", "RMSSD", "SDNN", "LF", "HF", "LFHF",     # cardiac
    "RR", "RD", "RV",                              # respiration
)

# Default validation bounds; warnings unless strict mode is on.
DEFAULT_BOUNDS: dict[str, tuple[float, float]] = {
    "Time": (1, 21),
    "KSS": (1, 10),
    "NASA": (1, 20),
}


class VariableRole(Enum):
    FEATURE = "feature"
    OUTCOME = "outcome"
    TREATMENT = "treatment"
    CONFOUNDER = "confounder"
    IDENTIFIER = "identifier"


@dataclass(frozen=True)
class ColumnType:
    kind: str  # "real" | "integer" | "categorical"
    levels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("real", "integer", "categorical"):
            raise ValidationError(f"unknown column kind {self.kind!r}")


Schema = dict[str, ColumnType]


def default_study_schema() -> Schema:
    """Schema of the canonical study table (Time, NDRT, states, symbols)."""
    schema: Schema = {
        "Participant": ColumnType("categorical"),
        "Time": ColumnType("integer"),
        "NDRT": ColumnType("categorical", NDRT_LEVELS),
        "NASA": ColumnType("real"),
        "KSS": ColumnType("real"),
        "Age": ColumnType("real"),
        "Gender": ColumnType("integer"),
        "Trust": ColumnType("real"),
        "DriveE": ColumnType("real"),
        "DriveD": ColumnType("integer"),
    }
    for name in SYMBOL_VARS:
        schema[name] = ColumnType("real")
    return schema


def load_schema(path: str | Path) -> Schema:
    """Read a column schema from JSON: {name: {type, levels?}}."""
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    schema: Schema = {}
    for name, spec in raw.items():
        levels = tuple(spec["levels"]) if "levels" in spec and spec["levels"] else None
        schema[name] = ColumnType(spec["type"], levels)
    return schema


@dataclass
class DriveRecord:
    """One drive of one participant with all measured variables."""

    participant_id: str
    drive_index: int | None = None
    ndrt_condition: str | None = None
    nasa_score: float | None = None
    kss_score: float | None = None
    individual: dict = field(default_factory=dict)
    symbols: dict = field(default_factory=dict)

    def value(self, name: str):
        """Look up a variable by its canonical column name."""
        if name == "Participant":
            return self.participant_id
        if name == "Time":
            return self.drive_index
        if name == "NDRT":
            return self.ndrt_condition
        if name == "NASA":
            return self.nasa_score
        if name == "KSS":
            return self.kss_score
        if name in self.individual:
            return self.individual[name]
        return self.symbols.get(name)


@dataclass
class LoadResult:
    records: list
    n_dropped: int


def _parse_cell(text: str, ctype: ColumnType, row: int, column: str):
    text = text.strip()
    if text == "":
        return None
    if ctype.kind == "categorical":
        if ctype.levels is not None and text not in ctype.levels:
            raise ValidationError(
                f"row {row}, column {column!r}: {text!r} is not one of {list(ctype.levels)}"
            )
        return text
    try:
        if ctype.kind == "integer":
            return int(text)
        return float(text)
    except ValueError:
        raise ValidationError(
            f"row {row}, column {column!r}: cannot parse {text!r} as {ctype.kind}"
        ) from None


def _check_bounds(name, value, bounds, row, strict):
    if value is None or name not in bounds:
        return
    lo, hi = bounds[name]
    if not lo <= value <= hi:
        msg = f"row {row}: {name}={value} outside [{lo}, {hi}]"
        if strict:
            raise ValidationError(msg)
        warnings.warn(msg, stacklevel=3)


def load_drive_csv(
    path: str | Path,
    schema: Schema | None = None,
    drop_incomplete: bool = False,
    strict: bool = False,
    bounds: dict | None = None,
) -> LoadResult:
    """Parse a drive table CSV into records.

    The header must carry exactly the schema's column names. Numeric
    parsing is strict; a non-numeric cell in a numeric column is an error
    naming the row and column. Blank cells become missing values, or drop
    the whole row when ``drop_incomplete`` is set. Range violations warn
    by default and raise in strict mode.
    """
    schema = schema if schema is not None else default_study_schema()
    merged_bounds = dict(DEFAULT_BOUNDS)
    if bounds:
        merged_bounds.update(bounds)

    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        if set(header) != set(schema):
            missing = sorted(set(schema) - set(header))
            extra = sorted(set(header) - set(schema))
            raise ValidationError(
                f"{path}: header mismatch; missing {missing}, unexpected {extra}"
            )
        records = []
        n_dropped = 0
        for row_num, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise ValidationError(
                    f"row {row_num}: expected {len(header)} cells, got {len(row)}"
                )
            cells = {}
            for name, text in zip(header, row):
                cells[name] = _parse_cell(text, schema[name], row_num, name)
            for name in merged_bounds:
                if name in cells:
                    _check_bounds(name, cells[name], merged_bounds, row_num, strict)
            if drop_incomplete and any(v is None for v in cells.values()):
                n_dropped += 1
                continue
            records.append(_record_from_cells(cells, row_num))
    return LoadResult(records, n_dropped)


def _record_from_cells(cells: dict, row_num: int) -> DriveRecord:
    individual = {k: cells[k] for k in INDIVIDUAL_VARS if k in cells}
    known = {"Participant", "Time", "NDRT", "NASA", "KSS", *INDIVIDUAL_VARS}
    symbols = {k: v for k, v in cells.items() if k not in known}
    pid = cells.get("Participant")
    return DriveRecord(
        participant_id=str(pid) if pid is not None else f"row{row_num}",
        drive_index=cells.get("Time"),
        ndrt_condition=cells.get("NDRT"),
        nasa_score=cells.get("NASA"),
        kss_score=cells.get("KSS"),
        individual=individual,
        symbols=symbols,
    )


@dataclass
class FeatureTable:
    """Dense analysis matrix with one causal role per column.

    Categorical columns hold level indices into ``categorical_levels``;
    everything else is a float value. Rows with missing required cells
    have already been dropped (``n_dropped`` keeps the count).
    """

    column_names: list
    roles: list
    values: np.ndarray
    categorical_levels: dict = field(default_factory=dict)
    n_dropped: int = 0

    def __post_init__(self):
        if len(self.column_names) != len(self.roles):
            raise ValidationError("column/role lists disagree")
        if self.values.ndim != 2 or self.values.shape[1] != len(self.column_names):
            raise ValidationError("matrix width does not match columns")
        if np.isnan(self.values).any():
            raise ValidationError("assembled table contains missing values")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.column_names.index(name)
        except ValueError:
            raise ValidationError(f"unknown column {name!r}") from None
        return self.values[:, j]

    def labels(self, name: str) -> list:
        """Decode a categorical column back to its level labels."""
        levels = self.categorical_levels.get(name)
        if levels is None:
            raise ValidationError(f"column {name!r} is not categorical")
        return [levels[int(i)] for i in self.column(name)]

    def columns_for_role(self, role: VariableRole) -> list:
        return [c for c, r in zip(self.column_names, self.roles) if r is role]


def assemble_feature_table(records: list, spec) -> FeatureTable:
    """Map a model spec's role assignment onto record columns.

    Column order is the feature block, confounder block, treatment block,
    then outcome block. Rows missing any required value are dropped and
    counted. Categorical treatments stay as level indices; encoding to
    indicators is a separate step.
    """
    blocks = [
        (tuple(spec.features), VariableRole.FEATURE),
        (tuple(spec.confounders), VariableRole.CONFOUNDER),
        (tuple(spec.treatments), VariableRole.TREATMENT),
        (tuple(spec.outcomes), VariableRole.OUTCOME),
    ]
    names: list[str] = []
    roles: list[VariableRole] = []
    for vars_, role in blocks:
        for v in vars_:
            if v in names:
                raise ValidationError(f"variable {v!r} assigned more than one role")
            names.append(v)
            roles.append(role)
    if not records:
        raise ValidationError("no records to assemble")

    probe = records[0]
    categorical = {}
    for name in names:
        if name == "NDRT":
            categorical[name] = list(NDRT_LEVELS)
    # any unknown variable is an error, checked against the first record
    for name in names:
        if probe.value(name) is None and name not in _all_known_names(probe):
            raise ValidationError(f"unknown variable {name!r}")

    rows = []
    n_dropped = 0
    for rec in records:
        vals = [rec.value(name) for name in names]
        if any(v is None for v in vals):
            n_dropped += 1
            continue
        encoded = []
        for name, v in zip(names, vals):
            if name in categorical:
                try:
                    encoded.append(float(categorical[name].index(v)))
                except ValueError:
                    raise ValidationError(
                        f"value {v!r} of {name!r} not in levels {categorical[name]}"
                    ) from None
            else:
                encoded.append(float(v))
        rows.append(encoded)
    if not rows:
        raise ValidationError("no rows left after dropping incomplete records")
    return FeatureTable(
        column_names=names,
        roles=roles,
        values=np.asarray(rows, dtype=np.float64),
        categorical_levels=categorical,
        n_dropped=n_dropped,
    )


def _all_known_names(record: DriveRecord) -> set:
    names = {"Participant", "Time", "NDRT", "NASA", "KSS"}
    names.update(record.individual)
    names.update(record.symbols)
    return names


def encode_treatment(values, baseline: str, level_order) -> tuple[np.ndarray, list]:
    """One-hot indicators for every non-baseline level, in level order.

    Baseline rows encode as all zeros. Unseen categories and a baseline
    absent from the level order are errors.
    """
    level_order = list(level_order)
    if baseline not in level_order:
        raise ValidationError(f"baseline {baseline!r} not in level order")
    contrast_levels = [lv for lv in level_order if lv != baseline]
    index = {lv: j for j, lv in enumerate(contrast_levels)}
    out = np.zeros((len(values), len(contrast_levels)))
    for i, v in enumerate(values):
        if v == baseline:
            continue
        if v not in index:
            raise ValidationError(f"unseen category {v!r}")
        out[i, index[v]] = 1.0
    return out, contrast_levels


def write_feature_table_csv(table: FeatureTable, path: str | Path) -> None:
    """Write the table; floats use repr so reloading is value-exact."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(table.column_names)
        for i in range(table.n_rows):
            row = []
            for j, name in enumerate(table.column_names):
                v = table.values[i, j]
                if name in table.categorical_levels:
                    row.append(table.categorical_levels[name][int(v)])
                else:
                    row.append(repr(float(v)))
            writer.writerow(row)


def read_feature_table_csv(path: str | Path, like: FeatureTable) -> FeatureTable:
    """Reload a table written by ``write_feature_table_csv``.

    ``like`` supplies the role tags and categorical level maps, which the
    CSV itself does not carry.
    """
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != list(like.column_names):
            raise ValidationError("column names do not match the template table")
        rows = []
        for row in reader:
            vals = []
            for name, text in zip(header, row):
                if name in like.categorical_levels:
                    vals.append(float(like.categorical_levels[name].index(text)))
                else:
                    vals.append(float(text))
            rows.append(vals)
    return FeatureTable(
        column_names=list(like.column_names),
        roles=list(like.roles),
        values=np.asarray(rows, dtype=np.float64),
        categorical_levels=dict(like.categorical_levels),
        n_dropped=0,
    )
