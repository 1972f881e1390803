"""Bidirectional row <-> text conversion.

A row is rendered as `"<descriptor> is <value>, <descriptor> is <value>, ..."`.
The reverse parser must accept arbitrary generated text, so it never raises on
malformed input; it returns a ParsedRow with `complete=False` and a reason
code instead.

Grammar notes. The separator between entries is exactly `", "` and the
qualifier between descriptor and value is exactly `" is "`. Ingestion refuses
cells containing either substring, and descriptor sanitization strips commas
and rewrites internal `" is "` to `" is-"`, so splitting on `", "` and then
matching the longest known descriptor prefix recovers every entry
unambiguously, for both fixed and per-row-permuted column order.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .errors import CodecError
from .table import NUMERIC, parse_decimal

PROTOCOL_TAGS = ("baseline", "expert", "llm_guided", "novel_mapping")

FIXED = "fixed"
PERMUTED = "permuted"

# Reason codes attached to incomplete ParsedRows.
REASON_EMPTY = "empty_text"
REASON_UNKNOWN_DESCRIPTOR = "unknown_descriptor"
REASON_DUPLICATE_COLUMN = "duplicate_column"
REASON_MISSING_COLUMN = "missing_column"
REASON_NON_NUMERIC = "non_numeric_value"


def sanitize_descriptor(text):
    """Normalize a descriptor so it cannot collide with the encoding grammar.

    Commas are stripped, whitespace runs collapse to single spaces, and any
    internal " is " becomes " is-".
    """
    out = str(text).replace(",", "")
    out = " ".join(out.split())
    while " is " in out:
        out = out.replace(" is ", " is-")
    return out


@dataclass(frozen=True)
class DescriptorSet:
    """Per-column descriptor texts, in schema column order."""

    entries: tuple[tuple[str, str], ...]  # (column name, descriptor text)
    protocol_tag: str

    def __post_init__(self):
        if self.protocol_tag not in PROTOCOL_TAGS:
            raise CodecError(f"unknown protocol tag {self.protocol_tag!r}")
        columns = [c for c, _ in self.entries]
        if len(set(columns)) != len(columns):
            raise CodecError("duplicate column names in descriptor set")
        texts = [d for _, d in self.entries]
        if len(set(texts)) != len(texts):
            raise CodecError("duplicate descriptor texts")
        for column, text in self.entries:
            if not text:
                raise CodecError(f"column {column!r}: empty descriptor")
            if ", " in text or " is " in text:
                raise CodecError(
                    f"column {column!r}: descriptor {text!r} collides with the "
                    "encoding grammar (run it through sanitize_descriptor)"
                )

    @property
    def columns(self):
        return tuple(c for c, _ in self.entries)

    @property
    def descriptors(self):
        return tuple(d for _, d in self.entries)

    def descriptor_for(self, column):
        for c, d in self.entries:
            if c == column:
                return d
        raise CodecError(f"no descriptor for column {column!r}")

    @classmethod
    def build(cls, columns, texts, protocol_tag):
        """Sanitize `texts` and pair them with `columns` positionally."""
        if len(columns) != len(texts):
            raise CodecError(f"{len(columns)} columns but {len(texts)} descriptors")
        entries = tuple(
            (column, sanitize_descriptor(text)) for column, text in zip(columns, texts)
        )
        return cls(entries=entries, protocol_tag=protocol_tag)


@dataclass(frozen=True)
class EncodedRow:
    text: str
    source_row_index: int | None = None


@dataclass(frozen=True)
class ParsedRow:
    values: dict[str, str]
    complete: bool
    reason: str | None = None


def _require_matching(schema_columns, descriptors):
    if tuple(schema_columns) != descriptors.columns:
        raise CodecError(
            f"descriptor columns {descriptors.columns} do not match schema "
            f"columns {tuple(schema_columns)}"
        )


def encode_row(row, descriptors, source_row_index=None):
    """Encode one row (cell lexemes in schema order) as text."""
    row = tuple(row)
    if len(row) != len(descriptors.entries):
        raise CodecError(
            f"row has {len(row)} cells but descriptor set has {len(descriptors.entries)}"
        )
    text = ", ".join(
        f"{descriptor} is {lexeme}"
        for (_, descriptor), lexeme in zip(descriptors.entries, row)
    )
    return EncodedRow(text=text, source_row_index=source_row_index)


def encode_corpus(table, descriptors, order=FIXED, seed=0):
    """Encode every table row; `order=permuted` shuffles columns per row.

    The permutation stream is seeded once, so the same (table, descriptors,
    seed) always produces the same corpus.
    """
    _require_matching(table.columns, descriptors)
    if order == FIXED:
        return [encode_row(row, descriptors, i) for i, row in enumerate(table.rows)]
    if order != PERMUTED:
        raise CodecError(f"unknown corpus order {order!r}")
    rng = random.Random(seed)
    n = len(descriptors.entries)
    out = []
    for i, row in enumerate(table.rows):
        perm = list(range(n))
        rng.shuffle(perm)
        text = ", ".join(
            f"{descriptors.entries[j][1]} is {row[j]}" for j in perm
        )
        out.append(EncodedRow(text=text, source_row_index=i))
    return out


def make_test_prompt(descriptors, seed):
    """Build a value-free generation prompt: a seeded-uniform "<descriptor> is"."""
    if not descriptors.entries:
        raise CodecError("cannot build a prompt from an empty descriptor set")
    choice = random.Random(seed).randrange(len(descriptors.entries))
    return f"{descriptors.entries[choice][1]} is"


def parse_row(text, schema, descriptors):
    """Parse raw generated text back into per-column lexemes.

    Total over arbitrary strings: splits on ", ", matches each segment
    against the longest descriptor that is a prefix followed by " is ", and
    reports failure via `complete=False` plus a reason code (unknown
    descriptor, duplicate column, missing column, non-numeric value in a
    numeric column, or empty text).
    """
    _require_matching(schema.columns, descriptors)
    if not text.strip():
        return ParsedRow(values={}, complete=False, reason=REASON_EMPTY)
    by_length = sorted(descriptors.entries, key=lambda e: len(e[1]), reverse=True)
    values = {}
    for segment in text.split(", "):
        match = None
        for column, descriptor in by_length:
            prefix = descriptor + " is "
            if segment.startswith(prefix):
                match = (column, segment[len(prefix):])
                break
        if match is None:
            return ParsedRow(values=values, complete=False, reason=REASON_UNKNOWN_DESCRIPTOR)
        column, lexeme = match
        if column in values:
            return ParsedRow(values=values, complete=False, reason=REASON_DUPLICATE_COLUMN)
        values[column] = lexeme
    for spec in schema.specs:
        if spec.name not in values:
            return ParsedRow(values=values, complete=False, reason=REASON_MISSING_COLUMN)
        if spec.kind == NUMERIC and parse_decimal(values[spec.name]) is None:
            return ParsedRow(values=values, complete=False, reason=REASON_NON_NUMERIC)
    return ParsedRow(values=values, complete=True, reason=None)


def write_corpus(encoded_rows, path):
    """Write one encoded row per line (the fine-tuning corpus wire format)."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in encoded_rows:
            fh.write(row.text + "\n")


def read_corpus(path):
    """Read a corpus file back into a list of line strings."""
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]
