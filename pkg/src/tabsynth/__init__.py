"""tabsynth: tabular-to-text synthetic data generation and evaluation.

The pipeline encodes table rows as "<descriptor> is <value>" text, enriches
the descriptors through one of four protocols, drives a text-generation
backend to sample new rows, filters them by rejection sampling, and scores
the result by training tree models on the synthetic rows and testing them on
held-out real rows.
"""

from .backends import FinetuneConfig, GenParams, NGramBackend, RemoteBackend, ngram_finetune, ngram_generate
from .codec import DescriptorSet, EncodedRow, ParsedRow, encode_corpus, encode_row, make_test_prompt, parse_row
from .errors import PipelineError, SamplingExhausted
from .mle import MleReport, evaluate_mle, fit_forest, fit_tree, grid_search_cv, predict_forest, predict_tree
from .pipeline import PipelineConfig, RunManifest, load_config, run_pipeline
from .protocols import (
    ChatEndpointConfig,
    DescriptorQuery,
    baseline_descriptors,
    build_llm_guided_query,
    build_novel_mapping_query,
    expert_descriptors,
    parse_descriptor_response,
    parse_mapping_response,
)
from .synthesizer import SamplingPolicy, SamplingStats, SyntheticTable, generate_synthetic, validate_row
from .table import Table, TableSchema, column_ranges, infer_schema, load_csv, split

__version__ = "0.1.0"

__all__ = [
    "ChatEndpointConfig",
    "DescriptorQuery",
    "DescriptorSet",
    "EncodedRow",
    "FinetuneConfig",
    "GenParams",
    "MleReport",
    "NGramBackend",
    "ParsedRow",
    "PipelineConfig",
    "PipelineError",
    "RemoteBackend",
    "RunManifest",
    "SamplingExhausted",
    "SamplingPolicy",
    "SamplingStats",
    "SyntheticTable",
    "Table",
    "TableSchema",
    "baseline_descriptors",
    "build_llm_guided_query",
    "build_novel_mapping_query",
    "column_ranges",
    "encode_corpus",
    "encode_row",
    "evaluate_mle",
    "expert_descriptors",
    "fit_forest",
    "fit_tree",
    "generate_synthetic",
    "grid_search_cv",
    "infer_schema",
    "load_config",
    "load_csv",
    "make_test_prompt",
    "ngram_finetune",
    "ngram_generate",
    "parse_descriptor_response",
    "parse_mapping_response",
    "parse_row",
    "predict_forest",
    "predict_tree",
    "run_pipeline",
    "split",
    "validate_row",
]
