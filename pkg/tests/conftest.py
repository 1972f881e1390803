"""Shared fixtures and random-data helpers."""

from __future__ import annotations

import random

import pytest

from tabsynth.codec import DescriptorSet
from tabsynth.table import (
    CATEGORICAL,
    CLASSIFICATION,
    NUMERIC,
    REGRESSION,
    ColumnSpec,
    Table,
    TableSchema,
)

_NAME_POOL = (
    "alpha", "beta", "flux", "width", "conc", "f Len", "a,b", "rate of change",
    "attr", "shimmer", "jitter", "x", "hue", "spread", "load", "phase",
)

_CATEGORICAL_CHARS = (
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
    "-_.:;!?'@#$%^&*()[]{}|/\\+=~`<> éαβ日"
)


def make_table(columns, rows):
    return Table(columns=tuple(columns), rows=tuple(tuple(r) for r in rows))


def make_schema(table, target):
    from tabsynth.table import infer_schema

    return infer_schema(table, target)


def random_lexeme(rng, numeric):
    """A cell lexeme satisfying the ingestion constraints."""
    if numeric:
        style = rng.randrange(4)
        if style == 0:
            return str(rng.randrange(-1000, 1000))
        if style == 1:
            return f"{rng.uniform(-100, 100):.3f}"
        if style == 2:
            return f"{rng.uniform(-1e5, 1e5):g}"
        return f"{rng.uniform(1e-4, 1e4):e}"
    while True:
        n = rng.randrange(1, 12)
        text = "".join(rng.choice(_CATEGORICAL_CHARS) for _ in range(n))
        text = text.replace(", ", ",").replace(" is ", "_is_").strip()
        if text:
            return text


def random_schema_and_rows(rng, n_rows, max_cols=25):
    """A random mixed-kind table plus matching schema and baseline descriptors.

    Column names draw from a pool that includes commas, spaces, and " is "
    fragments so descriptor sanitization is exercised; an index suffix keeps
    sanitized names unique.
    """
    n_cols = rng.randrange(1, max_cols + 1)
    columns = []
    kinds = []
    for j in range(n_cols):
        base = rng.choice(_NAME_POOL)
        columns.append(f"{base} {j}")
        kinds.append(rng.random() < 0.5)
    # make sure at least the target column exists; target is the last column
    rows = [
        tuple(random_lexeme(rng, numeric) for numeric in kinds) for _ in range(n_rows)
    ]
    specs = []
    for j, (name, numeric) in enumerate(zip(columns, kinds)):
        cells = [row[j] for row in rows]
        if numeric:
            values = [float(c) for c in cells]
            specs.append(
                ColumnSpec(
                    name=name,
                    kind=NUMERIC,
                    numeric_range=(min(values), max(values)),
                    is_target=j == n_cols - 1,
                )
            )
        else:
            specs.append(
                ColumnSpec(
                    name=name,
                    kind=CATEGORICAL,
                    levels=frozenset(cells),
                    is_target=j == n_cols - 1,
                )
            )
    task = REGRESSION if kinds[-1] else CLASSIFICATION
    schema = TableSchema(specs=tuple(specs), task=task)
    table = make_table(columns, rows)
    descriptors = DescriptorSet.build(schema.columns, schema.columns, "baseline")
    return table, schema, descriptors


@pytest.fixture
def rng():
    return random.Random(20240817)


@pytest.fixture
def toy_classification():
    """12 rows, two numeric features, binary categorical target."""
    rows = []
    rng = random.Random(7)
    for _ in range(12):
        a = rng.randrange(0, 10)
        b = rng.randrange(0, 10)
        label = "pos" if a + b >= 10 else "neg"
        rows.append((str(a), str(b), label))
    table = make_table(("a", "b", "label"), rows)
    return table, make_schema(table, "label")


@pytest.fixture
def toy_regression():
    """12 rows, two numeric features, numeric target."""
    rows = []
    rng = random.Random(11)
    for _ in range(12):
        a = rng.randrange(0, 10)
        b = rng.randrange(0, 10)
        rows.append((str(a), str(b), str(a * 2 + b)))
    table = make_table(("a", "b", "y"), rows)
    return table, make_schema(table, "y")
