"""Dataset ingestion, schema inference, value ranges, and seeded splitting.

Cell values are kept as the original lexemes read from disk; typed views
(floats, level indices) are computed on demand so that a table written back
to CSV and re-read is identical lexeme-for-lexeme.
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass

from .errors import IngestError, SchemaError, SplitError

NUMERIC = "numeric"
CATEGORICAL = "categorical"
CLASSIFICATION = "classification"
REGRESSION = "regression"

# These substrings collide with the row-encoding grammar (entry separator and
# qualifier), and newlines collide with the line-delimited corpus file, so
# cells containing them are refused at ingestion.
_FORBIDDEN_CELL_PARTS = (", ", " is ", "\n", "\r")


def parse_decimal(lexeme):
    """Return the finite float value of `lexeme`, or None if it has none."""
    try:
        value = float(lexeme)
    except (TypeError, ValueError):
        return None
    return value if math.isfinite(value) else None


def format_number(value):
    """Format a float the way ranges are printed: no trailing '.0' on integers."""
    if value == int(value) and abs(value) < 1e16:
        return str(int(value))
    return repr(float(value))


@dataclass(frozen=True)
class Table:
    """An immutable rectangle of cell lexemes with a named header."""

    columns: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if len(set(self.columns)) != len(self.columns):
            raise IngestError("duplicate column names in header")
        if any(not name for name in self.columns):
            raise IngestError("empty column name in header")
        for i, row in enumerate(self.rows, start=1):
            if len(row) != len(self.columns):
                raise IngestError(
                    f"row {i}: expected {len(self.columns)} fields, got {len(row)}"
                )

    @property
    def n_rows(self):
        return len(self.rows)

    @property
    def n_cols(self):
        return len(self.columns)

    def column(self, name):
        """All lexemes of one column, in row order."""
        try:
            j = self.columns.index(name)
        except ValueError:
            raise SchemaError(f"unknown column {name!r}") from None
        return [row[j] for row in self.rows]


@dataclass(frozen=True)
class ColumnSpec:
    """Metadata for one column: kind, observed range or level set, target flag."""

    name: str
    kind: str
    numeric_range: tuple[float, float] | None = None
    levels: frozenset[str] | None = None
    is_target: bool = False

    def __post_init__(self):
        if self.kind == NUMERIC:
            if self.numeric_range is None or self.levels is not None:
                raise SchemaError(f"column {self.name!r}: numeric spec needs a range")
            lo, hi = self.numeric_range
            if not (lo <= hi):
                raise SchemaError(f"column {self.name!r}: range min > max")
        elif self.kind == CATEGORICAL:
            if self.levels is None or self.numeric_range is not None:
                raise SchemaError(f"column {self.name!r}: categorical spec needs levels")
        else:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")

    def sorted_levels(self):
        return sorted(self.levels) if self.levels is not None else []


@dataclass(frozen=True)
class TableSchema:
    """Ordered column specs plus the prediction task implied by the target."""

    specs: tuple[ColumnSpec, ...]
    task: str

    def __post_init__(self):
        if self.task not in (CLASSIFICATION, REGRESSION):
            raise SchemaError(f"unknown task {self.task!r}")
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names in schema")
        if self.specs:
            targets = [s for s in self.specs if s.is_target]
            if len(targets) != 1:
                raise SchemaError(f"expected exactly one target column, got {len(targets)}")
            want = CLASSIFICATION if targets[0].kind == CATEGORICAL else REGRESSION
            if self.task != want:
                raise SchemaError(
                    f"task {self.task!r} inconsistent with target kind {targets[0].kind!r}"
                )

    @property
    def columns(self):
        return tuple(s.name for s in self.specs)

    @property
    def target(self):
        for spec in self.specs:
            if spec.is_target:
                return spec
        raise SchemaError("schema has no target column")

    def spec_for(self, name):
        for spec in self.specs:
            if spec.name == name:
                return spec
        raise SchemaError(f"unknown column {name!r}")


@dataclass(frozen=True)
class SplitPair:
    """A seeded train/test partition of a source table."""

    train: Table
    test: Table
    seed: int
    ratio: float


def load_csv(path, has_header=True):
    """Read a CSV file into a Table, preserving cell lexemes verbatim.

    Refuses ragged rows (reported with a 1-based data row index), duplicate
    or empty header names, empty cells, and cells containing the encoding
    separators (", ", " is ") or line breaks.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        records = [tuple(rec) for rec in csv.reader(fh)]
    if not records:
        raise IngestError(f"{path}: empty file")
    if has_header:
        header, body = records[0], records[1:]
    else:
        header, body = tuple(f"col_{j + 1}" for j in range(len(records[0]))), records
    if len(set(header)) != len(header):
        raise IngestError(f"{path}: duplicate header names")
    if any(not name for name in header):
        raise IngestError(f"{path}: empty header name")
    width = len(header)
    for i, row in enumerate(body, start=1):
        if len(row) != width:
            raise IngestError(f"{path}: row {i}: expected {width} fields, got {len(row)}")
        for name, cell in zip(header, row):
            if cell == "":
                raise IngestError(f"{path}: row {i}, column {name!r}: empty cell")
            for part in _FORBIDDEN_CELL_PARTS:
                if part in cell:
                    raise IngestError(
                        f"{path}: row {i}, column {name!r}: cell contains {part!r}, "
                        "which collides with the row encoding"
                    )
    return Table(columns=tuple(header), rows=tuple(body))


def write_csv(table, path):
    """Write a Table back to CSV; load_csv(write_csv(t)) is the identity."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(table.columns)
        writer.writerows(table.rows)


def load_schema_overrides(path):
    """Parse a schema override file: one `name,kind,is_target` line per column.

    `kind` may be empty to keep the inferred kind. Returns a mapping from
    column name to (kind or None, is_target flag).
    """
    overrides = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 3:
                raise SchemaError(f"{path}:{lineno}: expected `name,kind,is_target`")
            name, kind, target_flag = parts
            if kind and kind not in (NUMERIC, CATEGORICAL):
                raise SchemaError(f"{path}:{lineno}: unknown kind {kind!r}")
            flag = target_flag.lower()
            if flag not in ("true", "false", "1", "0", "yes", "no"):
                raise SchemaError(f"{path}:{lineno}: bad is_target flag {target_flag!r}")
            if name in overrides:
                raise SchemaError(f"{path}:{lineno}: duplicate override for {name!r}")
            overrides[name] = (kind or None, flag in ("true", "1", "yes"))
    return overrides


def infer_schema(table, target=None, task_hint=None, overrides=None):
    """Infer a TableSchema for `table`.

    A column is numeric iff every cell parses as a finite decimal; otherwise
    categorical. `overrides` (from load_schema_overrides) can force kinds and
    designate the target before inference defaults apply. `task_hint`
    overrides the task derived from the target kind; hinting classification
    on a numeric target reinterprets that column as categorical (its distinct
    lexemes become the class levels), which is how integer-coded labels are
    forced.
    """
    overrides = overrides or {}
    for name in overrides:
        if name not in table.columns:
            raise SchemaError(f"override names unknown column {name!r}")

    override_targets = [name for name, (_, flag) in overrides.items() if flag]
    if target is None:
        if len(override_targets) == 1:
            target = override_targets[0]
        elif override_targets:
            raise SchemaError(f"override file marks {len(override_targets)} targets")
        else:
            raise SchemaError("no target column given")
    elif override_targets and override_targets != [target]:
        raise SchemaError(
            f"target {target!r} conflicts with override target {override_targets}"
        )
    if target not in table.columns:
        raise SchemaError(f"unknown target column {target!r}")
    if task_hint is not None and task_hint not in (CLASSIFICATION, REGRESSION):
        raise SchemaError(f"unknown task hint {task_hint!r}")

    specs = []
    for name in table.columns:
        cells = table.column(name)
        forced_kind = overrides.get(name, (None, False))[0]
        values = [parse_decimal(c) for c in cells]
        parses_numeric = all(v is not None for v in values)
        kind = forced_kind if forced_kind else (NUMERIC if parses_numeric else CATEGORICAL)
        if kind == NUMERIC and not parses_numeric:
            raise SchemaError(f"column {name!r} forced numeric but has non-numeric cells")
        if name == target and task_hint == CLASSIFICATION:
            kind = CATEGORICAL
        specs.append((name, kind, cells, values))

    target_kind = next(kind for name, kind, _, _ in specs if name == target)
    if task_hint == REGRESSION and target_kind == CATEGORICAL:
        raise SchemaError(f"regression hinted but target {target!r} is categorical")
    task = task_hint or (CLASSIFICATION if target_kind == CATEGORICAL else REGRESSION)

    built = []
    for name, kind, cells, values in specs:
        if kind == NUMERIC:
            built.append(
                ColumnSpec(
                    name=name,
                    kind=NUMERIC,
                    numeric_range=(min(values), max(values)),
                    is_target=name == target,
                )
            )
        else:
            built.append(
                ColumnSpec(
                    name=name,
                    kind=CATEGORICAL,
                    levels=frozenset(cells),
                    is_target=name == target,
                )
            )
    return TableSchema(specs=tuple(built), task=task)


def split(table, ratio, seed):
    """Split `table` into a seeded SplitPair.

    Train size is floor(ratio * n_rows); assignment is a uniform shuffle of
    row indices under `seed`, so the same (table, ratio, seed) always yields
    the same partition. Row order within each part follows the source table.
    """
    if table.n_rows < 2:
        raise SplitError(f"need at least 2 rows to split, got {table.n_rows}")
    if not 0.0 < ratio < 1.0:
        raise SplitError(f"ratio must be in (0, 1), got {ratio}")
    indices = list(range(table.n_rows))
    random.Random(seed).shuffle(indices)
    n_train = math.floor(ratio * table.n_rows)
    train_idx = sorted(indices[:n_train])
    test_idx = sorted(indices[n_train:])
    make = lambda idx: Table(table.columns, tuple(table.rows[i] for i in idx))
    return SplitPair(train=make(train_idx), test=make(test_idx), seed=seed, ratio=ratio)


def column_ranges(table, schema):
    """Render one range description per column.

    Numeric columns print as "[min, max]" (from the ColumnSpec range),
    categorical ones as the sorted level set "{a, b}".
    """
    if schema.columns != table.columns:
        raise SchemaError(
            f"schema columns {schema.columns} do not match table columns {table.columns}"
        )
    out = []
    for spec in schema.specs:
        if spec.kind == NUMERIC:
            lo, hi = spec.numeric_range
            out.append(f"[{format_number(lo)}, {format_number(hi)}]")
        else:
            out.append("{" + ", ".join(spec.sorted_levels()) + "}")
    return out
