"""Rejection-sampling loop: prompt, generate, parse, validate, and account.

Malformed rows are discarded, never repaired, so downstream evaluation scores
stay attributable to the generator. Duplicates are kept; the synthetic table
is scored exactly as drawn.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

from .codec import make_test_prompt, parse_row
from .errors import ConfigError, SamplingExhausted
from .table import CATEGORICAL, NUMERIC, Table, parse_decimal, write_csv

BOUNDS_NONE = "none"
BOUNDS_STRICT = "strict"

REASON_OUT_OF_RANGE = "out_of_range"
REASON_UNKNOWN_LEVEL = "unknown_level"


@dataclass(frozen=True)
class SamplingPolicy:
    """How many rows to collect and how hard to try.

    max_attempts of 0 means the default cap of 100 * n_target.
    """

    n_target: int
    seed: int
    max_attempts: int = 0
    bounds: str = BOUNDS_NONE

    def __post_init__(self):
        if self.n_target < 1:
            raise ConfigError(f"n_target must be >= 1, got {self.n_target}")
        if self.bounds not in (BOUNDS_NONE, BOUNDS_STRICT):
            raise ConfigError(f"unknown bounds policy {self.bounds!r}")
        if self.max_attempts and self.max_attempts < self.n_target:
            raise ConfigError(
                f"max_attempts ({self.max_attempts}) must be >= n_target ({self.n_target})"
            )

    @property
    def attempt_cap(self):
        return self.max_attempts or 100 * self.n_target


@dataclass
class SamplingStats:
    attempts: int = 0
    accepted: int = 0
    rejected_by_reason: dict[str, int] = field(default_factory=dict)

    def record(self, reason):
        self.attempts += 1
        if reason is None:
            self.accepted += 1
        else:
            self.rejected_by_reason[reason] = self.rejected_by_reason.get(reason, 0) + 1

    def consistent(self):
        return self.attempts == self.accepted + sum(self.rejected_by_reason.values())

    def to_dict(self):
        return {
            "attempts": self.attempts,
            "accepted": self.accepted,
            "rejected_by_reason": dict(sorted(self.rejected_by_reason.items())),
        }


@dataclass
class SyntheticTable:
    """Accepted rows plus full provenance and sampling accounting."""

    table: Table
    provenance: dict
    stats: SamplingStats


def validate_row(parsed, schema, bounds=BOUNDS_NONE):
    """Return None to accept `parsed`, or a rejection reason string.

    Incomplete rows are rejected with the parser's reason. Under strict
    bounds, numeric values must fall inside the schema range and categorical
    lexemes must be known levels; under `none`, any complete row passes.
    """
    if bounds not in (BOUNDS_NONE, BOUNDS_STRICT):
        raise ConfigError(f"unknown bounds policy {bounds!r}")
    if not parsed.complete:
        return parsed.reason or "incomplete"
    if bounds == BOUNDS_STRICT:
        for spec in schema.specs:
            lexeme = parsed.values[spec.name]
            if spec.kind == NUMERIC:
                value = parse_decimal(lexeme)
                lo, hi = spec.numeric_range
                if not lo <= value <= hi:
                    return REASON_OUT_OF_RANGE
            elif spec.kind == CATEGORICAL and lexeme not in spec.levels:
                return REASON_UNKNOWN_LEVEL
    return None


def generate_synthetic(backend, schema, descriptors, policy, gen):
    """Collect `policy.n_target` valid rows from the backend.

    Attempt i prompts with seed policy.seed + i and samples with seed
    gen.seed + i, so a rerun with the same seeds reproduces the same table.
    Raises SamplingExhausted (carrying stats and partial rows) if the attempt
    cap is reached first.
    """
    stats = SamplingStats()
    rows = []
    cap = policy.attempt_cap
    attempt = 0
    while len(rows) < policy.n_target and attempt < cap:
        prompt = make_test_prompt(descriptors, policy.seed + attempt)
        params = replace(gen, seed=gen.seed + attempt, count=1)
        text = backend.generate(prompt, params)[0]
        parsed = parse_row(text, schema, descriptors)
        reason = validate_row(parsed, schema, policy.bounds)
        stats.record(reason)
        if reason is None:
            rows.append(tuple(parsed.values[spec.name] for spec in schema.specs))
        attempt += 1
    if len(rows) < policy.n_target:
        raise SamplingExhausted(
            f"collected {len(rows)} of {policy.n_target} rows in {stats.attempts} attempts",
            stats=stats,
            partial_rows=rows,
        )
    table = Table(columns=schema.columns, rows=tuple(rows))
    provenance = {
        "protocol_tag": descriptors.protocol_tag,
        "backend": getattr(backend, "backend_id", repr(backend)),
        "finetune": _maybe_asdict(getattr(backend, "finetune_config", None)),
        "generation": asdict(gen),
        "policy": asdict(policy),
    }
    return SyntheticTable(table=table, provenance=provenance, stats=stats)


def write_synthetic(synth, csv_path, sidecar_path=None):
    """Export the synthetic table as CSV plus a JSON provenance sidecar."""
    write_csv(synth.table, csv_path)
    if sidecar_path is None:
        sidecar_path = str(csv_path) + ".json"
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        json.dump(
            {"provenance": synth.provenance, "stats": synth.stats.to_dict()},
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    return sidecar_path


def _maybe_asdict(config):
    return None if config is None else asdict(config)
