"""Acceptance suite: one test per criterion, one printed PASS/FAIL line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines as they
print. Criterion 10 (GPU-scale reproduction) is skipped by design; criterion
11 lives in the fine-tuning server's own test suite (server/tests).
"""

from __future__ import annotations

import functools
import json
import math
import random
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from tabsynth.backends import FinetuneConfig, GenParams, NGramBackend, tokenize
from tabsynth.cli import main as cli_main
from tabsynth.codec import DescriptorSet, encode_corpus, parse_row
from tabsynth.errors import ProtocolError
from tabsynth.mle import (
    DECISION_TREE,
    GINI,
    RANDOM_FOREST,
    VARIANCE,
    ForestParams,
    TreeParams,
    accuracy,
    default_grids,
    evaluate_mle,
    fit_forest,
    fit_tree,
    grid_search_cv,
    mse,
    predict,
    predict_forest,
    predict_tree,
)
from tabsynth.protocols import (
    build_llm_guided_query,
    build_novel_mapping_query,
    parse_mapping_response,
)
from tabsynth.synthesizer import SamplingPolicy, generate_synthetic
from tabsynth.table import Table, infer_schema, load_csv, split

from conftest import make_table, random_schema_and_rows
from oracles import oracle_best_split, oracle_cv, random_tiny_dataset

DATA = Path(__file__).parent / "data"


def criterion(number, description):
    def wrap(fn):
        @functools.wraps(fn)
        def inner(*args, **kwargs):
            try:
                result = fn(*args, **kwargs)
            except BaseException:
                print(f"[ACCEPTANCE {number}] FAIL {description}", flush=True)
                raise
            print(f"[ACCEPTANCE {number}] PASS {description}", flush=True)
            return result

        return inner

    return wrap


@criterion(1, "codec round-trip: 10,000 rows across 50 schemas, both orders, < 10 s")
def test_criterion_1_codec_round_trip():
    started = time.perf_counter()
    rng = random.Random(811)
    rows_checked = 0
    schemas = 0
    while schemas < 50:
        n_rows = 100
        table, schema, descriptors = random_schema_and_rows(rng, n_rows=n_rows, max_cols=25)
        schemas += 1
        for order in ("fixed", "permuted"):
            encoded = encode_corpus(table, descriptors, order=order, seed=rng.randrange(10**6))
            for enc in encoded:
                parsed = parse_row(enc.text, schema, descriptors)
                assert parsed.complete, (enc.text, parsed.reason)
                original = table.rows[enc.source_row_index]
                assert tuple(parsed.values[c] for c in schema.columns) == original
                rows_checked += 1
    elapsed = time.perf_counter() - started
    assert rows_checked >= 10_000, rows_checked
    assert elapsed < 10.0, f"round-trip took {elapsed:.1f}s"


@criterion(2, "split law: partition property and floor sizes for 100 seeded splits")
def test_criterion_2_split_law():
    rng = random.Random(222)
    for _ in range(100):
        n_rows = rng.randrange(2, 400)
        table = make_table(("v",), [(str(i),) for i in range(n_rows)])
        seed = rng.randrange(10**9)
        pair = split(table, 0.9, seed)
        assert pair.train.n_rows == math.floor(0.9 * n_rows)
        assert pair.train.n_rows + pair.test.n_rows == n_rows
        assert sorted(pair.train.rows + pair.test.rows) == sorted(table.rows)
        train_set = {int(r[0]) for r in pair.train.rows}
        test_set = {int(r[0]) for r in pair.test.rows}
        assert not train_set & test_set


@criterion(3, "protocol templates byte-identical to goldens; mapping validator sound on fuzz corpus")
def test_criterion_3_protocol_templates():
    rendered = build_llm_guided_query("<name>", ["<list of column names>"]).text
    assert rendered == (DATA / "golden_llm_guided.txt").read_text(encoding="utf-8")
    rendered = build_novel_mapping_query(["<list of ranges>"], "<field name>").text
    assert rendered == (DATA / "golden_novel_mapping.txt").read_text(encoding="utf-8")

    # 50-case fuzz corpus: duplicates and count mismatches must be rejected,
    # and no accepted output may violate the uniqueness/count invariants.
    rng = random.Random(33)
    words = ["alpha", "beta", "gamma", "delta", "alpha", "x y", "1. alpha", ""]
    for case in range(50):
        n_columns = rng.randrange(1, 6)
        n_lines = rng.randrange(0, 8)
        response = "\n".join(rng.choice(words) for _ in range(n_lines))
        columns = [f"c{i}" for i in range(n_columns)]
        try:
            ds = parse_mapping_response(response, columns)
        except ProtocolError:
            continue
        assert len(ds.entries) == n_columns
        assert len(set(ds.descriptors)) == n_columns
    with pytest.raises(ProtocolError):
        parse_mapping_response("same\nsame", ["a", "b"])
    with pytest.raises(ProtocolError):
        parse_mapping_response("one\ntwo", ["a", "b", "c"])


@criterion(4, "n-gram memorization: 2,000 lines, 100% acceptance, marginals within TV 0.1")
def test_criterion_4_ngram_memorization():
    rng = random.Random(13)
    rows = [
        (rng.choice(["2", "4", "6"]), rng.choice(["red", "blue", "green"]), rng.choice(["g", "h"]))
        for _ in range(20)
    ]
    table = Table(("size", "color", "label"), tuple(rows))
    schema = infer_schema(table, "label", task_hint="classification")
    descriptors = DescriptorSet.build(schema.columns, schema.columns, "baseline")
    encoded = encode_corpus(table, descriptors, order="permuted", seed=3)
    lines = [e.text for e in encoded]
    k = max(len(tokenize(line)) for line in lines)
    backend = NGramBackend(order_k=k)
    backend.finetune(lines, FinetuneConfig())
    policy = SamplingPolicy(n_target=2000, max_attempts=2000, seed=100, bounds="strict")
    synth = generate_synthetic(
        backend, schema, descriptors, policy, GenParams(seed=7, max_new_tokens=4 * k)
    )
    # max_attempts == n_target, so reaching here means acceptance rate 100%
    assert synth.stats.attempts == synth.stats.accepted == 2000
    training = set(table.rows)
    assert all(row in training for row in synth.table.rows)
    for j in range(3):
        train_marginal = Counter(r[j] for r in table.rows)
        sample_marginal = Counter(r[j] for r in synth.table.rows)
        lexemes = set(train_marginal) | set(sample_marginal)
        tv = 0.5 * sum(
            abs(train_marginal[l] / 20 - sample_marginal[l] / 2000) for l in lexemes
        )
        assert tv <= 0.1, (table.columns[j], tv)


@criterion(5, "tree split oracle: 200 tiny datasets match exhaustive search, both criteria")
def test_criterion_5_tree_split_oracle():
    rng = random.Random(550)
    for case in range(200):
        for task, criterion_name in (("classification", GINI), ("regression", VARIANCE)):
            X, y = random_tiny_dataset(rng, task)
            expected = oracle_best_split(X, y, criterion_name)
            model = fit_tree(X, y, TreeParams(criterion=criterion_name), task)
            got = None if model.root.is_leaf else (model.root.feature, model.root.threshold)
            assert got == expected, (case, task, X.tolist(), y.tolist(), got, expected)


@criterion(6, "XOR exactness and single-tree forest equivalence")
def test_criterion_6_xor():
    X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    y = np.array([0, 1, 1, 0])
    tree = fit_tree(X, y, TreeParams(max_depth=2), "classification")
    assert accuracy(y, predict_tree(tree, X)) == 1.0
    deep = fit_tree(X, y, TreeParams(max_depth=6), "classification")
    assert accuracy(y, predict_tree(deep, X)) == 1.0
    forest = fit_forest(
        X,
        y,
        ForestParams(
            n_trees=1,
            tree=TreeParams(max_depth=2),
            seed=0,
            features_per_split="all",
            bootstrap=False,
        ),
        "classification",
    )
    assert list(predict_forest(forest, X)) == list(predict_tree(tree, X))
    assert forest.trees[0] == tree.root


@criterion(7, "CV oracle: 3x2 grid on 30 samples matches brute force, ties included")
def test_criterion_7_cv_oracle():
    rng = random.Random(77)
    X = np.array([[rng.randrange(0, 6), rng.randrange(0, 6)] for _ in range(30)], dtype=float)
    y = np.array([1 if a + b >= 6 else 0 for a, b in X.astype(int)])
    grid = [
        TreeParams(max_depth=d, min_samples_split=m)
        for d in (2, 8, None)  # depth 8 and unlimited tie on 30 samples
        for m in (2, 10)
    ]
    best, table = grid_search_cv(X, y, grid, folds=5, seed=9, task="classification")
    oracle_best, oracle_table = oracle_cv(
        X,
        y,
        grid,
        folds=5,
        seed=9,
        task="classification",
        fit_fn=lambda Xt, yt, cell: fit_tree(Xt, yt, cell, "classification"),
        predict_fn=predict_tree,
        metric_fn=accuracy,
    )
    assert best == oracle_best
    means = [entry["mean"] for entry in table]
    assert means == [entry["mean"] for entry in oracle_table]
    for mine, ref in zip(table, oracle_table):
        assert mine["fold_scores"] == ref["fold_scores"]
    # the tie must actually occur and resolve to the earlier cell
    assert means.count(max(means)) >= 2 or best == grid[means.index(max(means))]


def _write_desk_dataset(path):
    rng = random.Random(5)
    lines = ["x1,x2,x3,y"]
    for _ in range(500):
        a, b, c = rng.randrange(0, 10), rng.randrange(0, 10), rng.randrange(0, 10)
        lines.append(f"{a},{b},{c},{2 * a + b - c + rng.choice([-1, 0, 0, 1])}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_desk_config(path, dataset, out_dir):
    Path(path).write_text(
        f"""
[dataset]
path = "{dataset}"
target = "y"

[split]
ratio = 0.9
seed = 7

[protocol]
kind = "baseline"

[encoding]
order = "permuted"
seed = 11

[backend]
kind = "ngram"
order_k = 4

[generation]
temperature = 0.8
seed = 13

[sampling]
n_target = 150
seed = 17

[evaluation]
seed = 23

[output]
dir = "{out_dir}"
""",
        encoding="utf-8",
    )


@criterion(8, "end-to-end desk run: >= 100 rows, mse metric, reconciled stats, byte-identical rerun, < 60 s")
def test_criterion_8_end_to_end(tmp_path):
    dataset = tmp_path / "desk.csv"
    _write_desk_dataset(dataset)
    out_dirs = []
    for name in ("first", "second"):
        out_dir = tmp_path / name
        config = tmp_path / f"{name}.toml"
        _write_desk_config(config, dataset, out_dir)
        started = time.perf_counter()
        assert cli_main(["run", "--config", str(config)]) == 0
        elapsed = time.perf_counter() - started
        assert elapsed < 60.0, f"run took {elapsed:.1f}s"
        out_dirs.append(out_dir)

    synth = load_csv(out_dirs[0] / "synthetic.csv")
    assert synth.n_rows >= 100
    report = json.loads((out_dirs[0] / "mle_report.json").read_text())
    assert report["metric"] == "mse"
    assert report["models"][DECISION_TREE]["score"] >= 0.0
    stats = json.loads((out_dirs[0] / "synthetic.json").read_text())["stats"]
    assert stats["attempts"] == stats["accepted"] + sum(stats["rejected_by_reason"].values())
    manifest = json.loads((out_dirs[0] / "manifest.json").read_text())
    assert manifest["status"] == "ok"
    for artifact in manifest["artifacts"].values():
        assert Path(artifact).is_file(), artifact
    for artifact in ("synthetic.csv", "mle_report.json", "corpus.txt", "train.csv", "test.csv"):
        assert (out_dirs[0] / artifact).read_bytes() == (out_dirs[1] / artifact).read_bytes(), artifact


@criterion(9, "identity oracle: evaluate_mle(synth := real-train) equals direct evaluation bit-for-bit")
def test_criterion_9_identity_oracle():
    rng = random.Random(99)
    # classification toy
    cls_rows = []
    for _ in range(60):
        a, b = rng.randrange(0, 8), rng.randrange(0, 8)
        cls_rows.append((str(a), str(b), "hi" if a + b >= 8 else "lo"))
    cls_table = make_table(("a", "b", "cls"), cls_rows)
    # regression toy
    reg_rows = []
    for _ in range(60):
        a, b = rng.randrange(0, 8), rng.randrange(0, 8)
        reg_rows.append((str(a), str(b), str(2 * a - b)))
    reg_table = make_table(("a", "b", "target"), reg_rows)

    for table, target in ((cls_table, "cls"), (reg_table, "target")):
        schema = infer_schema(table, target)
        pair = split(table, 0.8, seed=4)
        seed = 31
        report = evaluate_mle(pair.train, pair.test, schema, seed=seed)

        levels = {
            spec.name: {lex: i for i, lex in enumerate(sorted(spec.levels))}
            for spec in schema.specs
            if spec.levels is not None
        }

        def encode(tbl):
            X = np.array([[float(r[0]), float(r[1])] for r in tbl.rows])
            if schema.task == "classification":
                y = np.array([levels[target][r[2]] for r in tbl.rows])
            else:
                y = np.array([float(r[2]) for r in tbl.rows])
            return X, y

        X_tr, y_tr = encode(pair.train)
        X_te, y_te = encode(pair.test)
        grids = default_grids(schema.task, seed)
        for family, fit_fn in ((DECISION_TREE, fit_tree), (RANDOM_FOREST, fit_forest)):
            best, _ = grid_search_cv(X_tr, y_tr, grids[family], folds=5, seed=seed, task=schema.task)
            model = fit_fn(X_tr, y_tr, best, schema.task)
            if schema.task == "classification":
                direct = accuracy(y_te, predict(model, X_te))
            else:
                direct = mse(y_te, predict(model, X_te))
            assert report.per_model[family] == direct, (family, schema.task)


@pytest.mark.skip(
    reason="criterion 10 is the optional GPU-scale reproduction (400-epoch fine-tuning "
    "of a pretrained language model); see README for the recipe"
)
def test_criterion_10_gpu_scale_reproduction():
    pass
