"""Config-driven orchestration of the whole experiment.

Stages run in a fixed order (ingest, describe, encode, finetune, generate,
evaluate), each reading only declared inputs and writing its artifacts into
the run directory. A RunManifest records the config snapshot, every seed,
every artifact path, and per-stage timings; together with the source dataset
it pins every output byte. Descriptor-provider output is cached in the run
directory so replays never depend on a live endpoint.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import report as figures
from .backends import (
    FinetuneConfig,
    GenParams,
    NGramBackend,
    RemoteBackend,
    load_ngram,
    save_ngram,
    tokenize,
)
from .codec import DescriptorSet, encode_corpus, read_corpus, write_corpus
from .errors import ConfigError, EvalError, PipelineError, SamplingExhausted
from .mle import evaluate_mle
from .protocols import (
    ChatEndpointConfig,
    baseline_descriptors,
    build_llm_guided_query,
    build_novel_mapping_query,
    expert_descriptors,
    request_descriptor_set,
)
from .synthesizer import SamplingPolicy, generate_synthetic, write_synthetic
from .table import Table, column_ranges, infer_schema, load_csv, load_schema_overrides, split, write_csv

log = logging.getLogger(__name__)

STAGES = ("ingest", "describe", "encode", "finetune", "generate", "evaluate")

PROTOCOLS = ("baseline", "expert", "llm_guided", "novel_mapping")
BACKENDS = ("ngram", "remote")

# Offsets applied to a --seed override, one per seeded stage.
_SEED_SLOTS = ("split", "encoding", "generation", "sampling", "evaluation")


@dataclass
class PipelineConfig:
    dataset_path: str
    target: str
    dataset_name: str
    split_ratio: float
    protocol_kind: str
    backend_kind: str
    out_dir: str
    seeds: dict[str, int]
    task_hint: str | None = None
    schema_overrides: str | None = None
    expert_file: str | None = None
    mapping_field: str | None = None
    endpoint: ChatEndpointConfig | None = None
    encoding_order: str = "fixed"
    ngram_k: int = 3
    ngram_granularity: str = "word"
    remote_url: str | None = None
    checkpoints: bool = False
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    max_new_tokens: int = 0  # 0 means auto: 4x the longest encoded line
    temperature: float = 0.7
    n_target: int = 0  # 0 means the real-train row count
    max_attempts: int = 0  # 0 means the sampling default
    bounds: str = "none"
    raw: dict = field(default_factory=dict)


def _need(section, key, conf, path):
    if key not in section:
        raise ConfigError(f"{path}: missing [{conf}] {key}")
    return section[key]


def load_config(path, out_override=None, seed_override=None):
    """Parse and validate a TOML pipeline config.

    Every stage seed is mandatory unless `seed_override` is given, in which
    case the override seeds every stage deterministically (split gets the
    seed itself, later stages get seed+1, seed+2, ...). Referenced files must
    exist at load time.
    """
    path = str(path)
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)

    dataset = raw.get("dataset", {})
    dataset_path = _need(dataset, "path", "dataset", path)
    if not Path(dataset_path).is_file():
        raise ConfigError(f"{path}: dataset file {dataset_path!r} does not exist")
    target = _need(dataset, "target", "dataset", path)
    schema_overrides = dataset.get("schema_overrides")
    if schema_overrides and not Path(schema_overrides).is_file():
        raise ConfigError(f"{path}: schema override file {schema_overrides!r} does not exist")

    seeds = {}
    if seed_override is not None:
        seeds = {slot: seed_override + i for i, slot in enumerate(_SEED_SLOTS)}
    else:
        for slot, section in (
            ("split", "split"),
            ("encoding", "encoding"),
            ("generation", "generation"),
            ("sampling", "sampling"),
            ("evaluation", "evaluation"),
        ):
            try:
                seeds[slot] = int(raw[section]["seed"])
            except (KeyError, TypeError):
                raise ConfigError(
                    f"{path}: [{section}] seed is mandatory (or pass --seed)"
                ) from None

    protocol = raw.get("protocol", {})
    protocol_kind = _need(protocol, "kind", "protocol", path)
    if protocol_kind not in PROTOCOLS:
        raise ConfigError(f"{path}: unknown protocol kind {protocol_kind!r}")
    expert_file = protocol.get("file")
    mapping_field = protocol.get("field")
    if protocol_kind == "expert":
        if not expert_file:
            raise ConfigError(f"{path}: protocol 'expert' needs file=")
        if not Path(expert_file).is_file():
            raise ConfigError(f"{path}: expert descriptor file {expert_file!r} does not exist")
    if protocol_kind == "novel_mapping" and not mapping_field:
        raise ConfigError(f"{path}: protocol 'novel_mapping' needs field=")
    endpoint = None
    if protocol_kind in ("llm_guided", "novel_mapping"):
        endpoint = ChatEndpointConfig(
            base_url=_need(protocol, "base_url", "protocol", path),
            model_id=_need(protocol, "model_id", "protocol", path),
            auth_token_env=protocol.get("auth_token_env", "TABSYNTH_CHAT_TOKEN"),
            timeout=float(protocol.get("timeout", 30.0)),
            max_retries=int(protocol.get("max_retries", 2)),
        )

    backend = raw.get("backend", {})
    backend_kind = _need(backend, "kind", "backend", path)
    if backend_kind not in BACKENDS:
        raise ConfigError(f"{path}: unknown backend kind {backend_kind!r}")
    remote_url = backend.get("url")
    if backend_kind == "remote" and not remote_url:
        raise ConfigError(f"{path}: backend 'remote' needs url=")

    finetune_raw = raw.get("finetune", {})
    finetune = FinetuneConfig(
        epochs=int(finetune_raw.get("epochs", 400)),
        learning_rate=float(finetune_raw.get("learning_rate", 5e-5)),
        mode=finetune_raw.get("mode", "full"),
        rank_r=int(finetune_raw.get("rank_r", 16)),
        alpha=float(finetune_raw.get("alpha", 32.0)),
        base_model_id=finetune_raw.get("base_model_id", "distilgpt2"),
    )

    generation = raw.get("generation", {})
    sampling = raw.get("sampling", {})
    out_dir = out_override or raw.get("output", {}).get("dir")
    if not out_dir:
        raise ConfigError(f"{path}: [output] dir is mandatory (or pass --out)")

    return PipelineConfig(
        dataset_path=dataset_path,
        target=target,
        dataset_name=dataset.get("name", Path(dataset_path).stem),
        task_hint=dataset.get("task_hint"),
        schema_overrides=schema_overrides,
        split_ratio=float(raw.get("split", {}).get("ratio", 0.9)),
        protocol_kind=protocol_kind,
        expert_file=expert_file,
        mapping_field=mapping_field,
        endpoint=endpoint,
        encoding_order=raw.get("encoding", {}).get("order", "fixed"),
        backend_kind=backend_kind,
        ngram_k=int(backend.get("order_k", 3)),
        ngram_granularity=backend.get("granularity", "word"),
        remote_url=remote_url,
        checkpoints=bool(backend.get("checkpoints", False)),
        finetune=finetune,
        max_new_tokens=int(generation.get("max_new_tokens", 0)),
        temperature=float(generation.get("temperature", 0.7)),
        n_target=int(sampling.get("n_target", 0)),
        max_attempts=int(sampling.get("max_attempts", 0)),
        bounds=sampling.get("bounds", "none"),
        out_dir=str(out_dir),
        seeds=seeds,
        raw=raw,
    )


@dataclass
class RunManifest:
    config: dict
    seeds: dict[str, int]
    artifacts: dict[str, str] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    status: str = "ok"
    failed_stage: str | None = None
    error: str | None = None
    checkpoint_mle: list | None = None

    def to_json_dict(self):
        out = {
            "config": self.config,
            "seeds": self.seeds,
            "artifacts": self.artifacts,
            "timings": self.timings,
            "status": self.status,
        }
        if self.failed_stage:
            out["failed_stage"] = self.failed_stage
            out["error"] = self.error
        if self.checkpoint_mle is not None:
            out["checkpoint_mle"] = self.checkpoint_mle
        return out

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


class Pipeline:
    """Executes stages against one run directory."""

    def __init__(self, config, session=None):
        self.cfg = config
        self.out = Path(config.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.session = session  # injected transport for remote protocols/backends
        self.manifest = RunManifest(config=config.raw, seeds=dict(config.seeds))
        self.table = None
        self.schema = None
        self.split_pair = None
        self.descriptors = None
        self.corpus = None
        self.backend = None
        self.finetune_report = None
        self.synth = None
        self.mle_report = None
        self._log_handler = logging.FileHandler(self.out / "run.log", encoding="utf-8")
        self._log_handler.setFormatter(logging.Formatter("%(asctime)s %(name)s: %(message)s"))
        logging.getLogger("tabsynth").addHandler(self._log_handler)
        logging.getLogger("tabsynth").setLevel(logging.INFO)
        self._artifact("run_log", self.out / "run.log")

    def close(self):
        logging.getLogger("tabsynth").removeHandler(self._log_handler)
        self._log_handler.close()

    def _artifact(self, name, path):
        self.manifest.artifacts[name] = str(path)
        return path

    # ----- stages ---------------------------------------------------------

    def stage_ingest(self):
        cfg = self.cfg
        self.table = load_csv(cfg.dataset_path)
        overrides = (
            load_schema_overrides(cfg.schema_overrides) if cfg.schema_overrides else None
        )
        self.schema = infer_schema(
            self.table, cfg.target, task_hint=cfg.task_hint, overrides=overrides
        )
        self.split_pair = split(self.table, cfg.split_ratio, cfg.seeds["split"])
        write_csv(self.split_pair.train, self._artifact("train_csv", self.out / "train.csv"))
        write_csv(self.split_pair.test, self._artifact("test_csv", self.out / "test.csv"))
        with open(self._artifact("schema_json", self.out / "schema.json"), "w") as fh:
            json.dump(_schema_to_dict(self.schema), fh, indent=2, sort_keys=True)
            fh.write("\n")
        log.info(
            "ingest: %d rows, %d columns, task %s, split %d/%d",
            self.table.n_rows,
            self.table.n_cols,
            self.schema.task,
            self.split_pair.train.n_rows,
            self.split_pair.test.n_rows,
        )

    def stage_describe(self):
        cfg = self.cfg
        cache = self.out / "descriptors.json"
        if cache.is_file():
            self.descriptors = _load_descriptors(cache, self.schema)
            self._artifact("descriptors_json", cache)
            log.info("describe: reusing cached descriptors (%s)", self.descriptors.protocol_tag)
            return
        query_text = None
        response_text = None
        if cfg.protocol_kind == "baseline":
            self.descriptors = baseline_descriptors(self.schema)
        elif cfg.protocol_kind == "expert":
            self.descriptors = expert_descriptors(self.schema, cfg.expert_file)
        else:
            if cfg.protocol_kind == "llm_guided":
                query = build_llm_guided_query(cfg.dataset_name, list(self.schema.columns))
            else:
                ranges = column_ranges(self.table, self.schema)
                query = build_novel_mapping_query(ranges, cfg.mapping_field)
            log.info("describe: descriptor query: %s", query.text)
            query_text = query.text
            self.descriptors, response_text = request_descriptor_set(
                cfg.endpoint, query, list(self.schema.columns), session=self.session
            )
        payload = {
            "protocol_tag": self.descriptors.protocol_tag,
            "entries": [list(entry) for entry in self.descriptors.entries],
            "query": query_text,
            "response": response_text,
        }
        with open(self._artifact("descriptors_json", cache), "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        log.info("describe: %s descriptors for %d columns", cfg.protocol_kind, len(self.descriptors.entries))

    def stage_encode(self):
        cfg = self.cfg
        encoded = encode_corpus(
            self.split_pair.train,
            self.descriptors,
            order=cfg.encoding_order,
            seed=cfg.seeds["encoding"],
        )
        self.corpus = [row.text for row in encoded]
        write_corpus(encoded, self._artifact("corpus_txt", self.out / "corpus.txt"))
        log.info("encode: %d lines (%s order)", len(self.corpus), cfg.encoding_order)

    def stage_finetune(self):
        cfg = self.cfg
        if cfg.backend_kind == "ngram":
            model_path = self.out / "model.json"
            self.backend = NGramBackend(cfg.ngram_k, cfg.ngram_granularity)
            if model_path.is_file():
                self.backend.model = load_ngram(model_path)
                self.backend.finetune_config = cfg.finetune
                self.finetune_report = {"status": "cached", "order_k": cfg.ngram_k}
                log.info("finetune: reusing cached n-gram model")
            else:
                self.finetune_report = self.backend.finetune(self.corpus, cfg.finetune)
                save_ngram(self.backend.model, model_path)
            self._artifact("model_json", model_path)
        else:
            backend = RemoteBackend(cfg.remote_url, session=self.session)
            job_path = self.out / "job.json"
            if job_path.is_file():
                with open(job_path) as fh:
                    cached = json.load(fh)
                backend.job_id = cached["job_id"]
                backend.finetune_config = cfg.finetune
                self.finetune_report = backend.status()
                log.info("finetune: reusing remote job %s", backend.job_id)
            else:
                self.finetune_report = backend.finetune(self.corpus, cfg.finetune)
                with open(job_path, "w") as fh:
                    json.dump({"job_id": backend.job_id, "report": self.finetune_report}, fh, indent=2)
                    fh.write("\n")
            self.backend = backend
            self._artifact("job_json", job_path)
        with open(self._artifact("finetune_report_json", self.out / "finetune_report.json"), "w") as fh:
            json.dump(self.finetune_report, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def _gen_params(self, seed):
        max_new = self.cfg.max_new_tokens
        if not max_new:
            longest = max(len(tokenize(line)) for line in self.corpus)
            max_new = 4 * longest
        return GenParams(seed=seed, max_new_tokens=max_new, temperature=self.cfg.temperature)

    def _policy(self):
        n_target = self.cfg.n_target or self.split_pair.train.n_rows
        return SamplingPolicy(
            n_target=n_target,
            seed=self.cfg.seeds["sampling"],
            max_attempts=self.cfg.max_attempts,
            bounds=self.cfg.bounds,
        )

    def stage_generate(self):
        params = self._gen_params(self.cfg.seeds["generation"])
        self.synth = generate_synthetic(
            self.backend, self.schema, self.descriptors, self._policy(), params
        )
        csv_path = self._artifact("synthetic_csv", self.out / "synthetic.csv")
        sidecar = write_synthetic(self.synth, csv_path, self.out / "synthetic.json")
        self._artifact("synthetic_json", sidecar)
        self._artifact(
            "sampling_figure",
            figures.render_sampling_stats(self.synth.stats, self.out / "sampling_stats.png"),
        )
        log.info(
            "generate: accepted %d rows in %d attempts",
            self.synth.stats.accepted,
            self.synth.stats.attempts,
        )

    def stage_evaluate(self):
        cfg = self.cfg
        self.mle_report = evaluate_mle(
            self.synth, self.split_pair.test, self.schema, seed=cfg.seeds["evaluation"]
        )
        with open(self._artifact("mle_report_json", self.out / "mle_report.json"), "w") as fh:
            json.dump(self.mle_report.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        self._artifact(
            "mle_figure",
            figures.render_mle_scores(self.mle_report, self.out / "mle_scores.png"),
        )
        log.info("evaluate: %s", {k: round(v, 6) for k, v in self.mle_report.per_model.items()})
        if cfg.backend_kind == "remote" and cfg.checkpoints:
            self._evaluate_checkpoints()

    def _evaluate_checkpoints(self):
        """Per-checkpoint MLE series: the epoch-efficiency study.

        Early checkpoints are barely trained and may not reach the sampling
        target; exhaustion there is data, not failure. Such checkpoints are
        scored on whatever rows they produced when at least 10 came back,
        and recorded as exhausted otherwise.
        """
        checkpoints = (self.finetune_report or {}).get("checkpoints") or []
        series = []
        for entry in checkpoints:
            tag, epoch = entry["tag"], entry["epoch"]
            backend = self.backend.at_checkpoint(tag)
            point = {"epoch": epoch, "tag": tag}
            try:
                synth = generate_synthetic(
                    backend,
                    self.schema,
                    self.descriptors,
                    self._policy(),
                    self._gen_params(self.cfg.seeds["generation"]),
                )
            except SamplingExhausted as exc:
                if len(exc.partial_rows) >= 10:
                    partial = Table(
                        columns=self.schema.columns, rows=tuple(exc.partial_rows)
                    )
                    rep = evaluate_mle(
                        partial,
                        self.split_pair.test,
                        self.schema,
                        seed=self.cfg.seeds["evaluation"],
                    )
                    point.update(
                        scores=rep.per_model,
                        accepted=len(exc.partial_rows),
                        partial=True,
                    )
                    log.info(
                        "checkpoint %s (epoch %d): partial (%d rows): %s",
                        tag, epoch, len(exc.partial_rows), rep.per_model,
                    )
                else:
                    point.update(accepted=exc.stats.accepted, exhausted=True)
                    log.info(
                        "checkpoint %s (epoch %d): sampling exhausted after %d attempts (%d rows)",
                        tag, epoch, exc.stats.attempts, exc.stats.accepted,
                    )
                series.append(point)
                continue
            rep = evaluate_mle(
                synth, self.split_pair.test, self.schema, seed=self.cfg.seeds["evaluation"]
            )
            point["scores"] = rep.per_model
            series.append(point)
            log.info("checkpoint %s (epoch %d): %s", tag, epoch, rep.per_model)
        if series:
            self.manifest.checkpoint_mle = series
            with open(self._artifact("checkpoint_mle_json", self.out / "checkpoint_mle.json"), "w") as fh:
                json.dump(series, fh, indent=2, sort_keys=True)
                fh.write("\n")
            self._artifact(
                "epoch_figure",
                figures.render_epoch_series(
                    series, self.mle_report.metric_name, self.out / "epoch_mle.png"
                ),
            )

    # ----- driver ---------------------------------------------------------

    def run(self, until=None):
        """Run stages in order, stopping after `until` if given.

        On stage failure the manifest is written with a failure marker and
        the partial artifacts, then the error propagates.
        """
        if until is not None and until not in STAGES:
            raise ConfigError(f"unknown stage {until!r}")
        stage_fns = {
            "ingest": self.stage_ingest,
            "describe": self.stage_describe,
            "encode": self.stage_encode,
            "finetune": self.stage_finetune,
            "generate": self.stage_generate,
            "evaluate": self.stage_evaluate,
        }
        manifest_path = self._artifact("manifest_json", self.out / "manifest.json")
        try:
            for stage in STAGES:
                started = time.perf_counter()
                stage_fns[stage]()
                self.manifest.timings[stage] = time.perf_counter() - started
                if stage == until:
                    break
        except PipelineError as exc:
            self.manifest.status = "failed"
            self.manifest.failed_stage = stage
            self.manifest.error = str(exc)
            self.manifest.write(manifest_path)
            raise
        finally:
            self.close()
        self.manifest.write(manifest_path)
        return self.manifest


def run_pipeline(config, until=None, session=None):
    return Pipeline(config, session=session).run(until=until)


def evaluate_files(synthetic_csv, test_csv, target, task_hint=None, out_dir=None, seed=0, grids=None):
    """Standalone MLE evaluation of a synthetic CSV against a real test CSV.

    The schema is inferred from the test table. Produces the same report the
    in-pipeline evaluation stage writes; when `out_dir` is given the JSON
    report and score figure are written there.
    """
    synth_table = load_csv(synthetic_csv)
    test_table = load_csv(test_csv)
    if synth_table.columns != test_table.columns:
        missing = [c for c in test_table.columns if c not in synth_table.columns]
        extra = [c for c in synth_table.columns if c not in test_table.columns]
        detail = []
        if missing:
            detail.append(f"missing from synthetic: {missing}")
        if extra:
            detail.append(f"unexpected in synthetic: {extra}")
        if not detail:
            detail.append(
                f"column order differs: {list(synth_table.columns)} vs {list(test_table.columns)}"
            )
        raise EvalError("header mismatch; " + "; ".join(detail))
    schema = infer_schema(test_table, target, task_hint=task_hint)
    report = evaluate_mle(synth_table, test_table, schema, grids=grids, seed=seed)
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "mle_report.json", "w", encoding="utf-8") as fh:
            json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        figures.render_mle_scores(report, out / "mle_scores.png")
    return report


def _schema_to_dict(schema):
    columns = []
    for spec in schema.specs:
        entry = {"name": spec.name, "kind": spec.kind, "is_target": spec.is_target}
        if spec.numeric_range is not None:
            entry["numeric_range"] = list(spec.numeric_range)
        if spec.levels is not None:
            entry["levels"] = spec.sorted_levels()
        columns.append(entry)
    return {"task": schema.task, "columns": columns}


def _load_descriptors(path, schema):
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    entries = tuple((c, d) for c, d in payload["entries"])
    descriptors = DescriptorSet(entries=entries, protocol_tag=payload["protocol_tag"])
    if descriptors.columns != schema.columns:
        raise ConfigError(
            f"cached descriptors at {path} cover {descriptors.columns}, "
            f"schema needs {schema.columns}"
        )
    return descriptors
