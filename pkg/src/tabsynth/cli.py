"""Command-line entry points.

Subcommands mirror the pipeline stages (`describe`, `encode`, `finetune`,
`generate`, `run`) plus a standalone `evaluate`. Exit codes: 0 success,
2 validation failure, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import (
    CodecError,
    ConfigError,
    CvError,
    EvalError,
    FitError,
    IngestError,
    MetricError,
    PipelineError,
    PredictError,
    ProtocolError,
    SchemaError,
    SplitError,
)
from .pipeline import evaluate_files, load_config, run_pipeline

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

_VALIDATION_ERRORS = (
    ConfigError,
    IngestError,
    SchemaError,
    SplitError,
    CodecError,
    ProtocolError,
    CvError,
    EvalError,
    FitError,
    PredictError,
    MetricError,
)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tabsynth",
        description="Tabular-to-text synthetic data pipeline with ML-efficiency scoring.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_command(name, help_text):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="TOML pipeline config")
        cmd.add_argument("--out", help="run directory (overrides [output] dir)")
        cmd.add_argument("--seed", type=int, help="master seed overriding all stage seeds")
        return cmd

    add_config_command("describe", "build and cache the descriptor set")
    add_config_command("encode", "encode the training split into a corpus file")
    add_config_command("finetune", "train the configured backend on the corpus")
    add_config_command("generate", "sample synthetic rows from the trained backend")
    add_config_command("run", "execute the full pipeline and write a manifest")

    ev = sub.add_parser("evaluate", help="score a synthetic CSV against a real test CSV")
    ev.add_argument("--synthetic", required=True, help="synthetic rows CSV")
    ev.add_argument("--test", required=True, help="real test rows CSV")
    ev.add_argument("--target", required=True, help="target column name")
    ev.add_argument("--task", choices=["classification", "regression"], help="task override")
    ev.add_argument("--out", help="directory for the report JSON and figure")
    ev.add_argument("--seed", type=int, default=0, help="cross-validation seed")
    return parser


_UNTIL = {
    "describe": "describe",
    "encode": "encode",
    "finetune": "finetune",
    "generate": "generate",
    "run": None,
}


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "evaluate":
            report = evaluate_files(
                args.synthetic,
                args.test,
                args.target,
                task_hint=args.task,
                out_dir=args.out,
                seed=args.seed,
            )
            for family in sorted(report.per_model):
                print(f"{family} {report.metric_name}: {report.per_model[family]:.6f}")
        else:
            config = load_config(args.config, out_override=args.out, seed_override=args.seed)
            manifest = run_pipeline(config, until=_UNTIL[args.command])
            print(f"wrote {manifest.artifacts['manifest_json']}")
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def console_main():
    sys.exit(main())


if __name__ == "__main__":
    console_main()
