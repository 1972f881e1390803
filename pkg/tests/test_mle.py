import random

import numpy as np
import pytest

from tabsynth.errors import ConfigError, CvError, EvalError, FitError, MetricError, PredictError
from tabsynth.mle import (
    DECISION_TREE,
    GINI,
    RANDOM_FOREST,
    VARIANCE,
    FittedModel,
    ForestParams,
    TreeNode,
    TreeParams,
    accuracy,
    cv_folds,
    default_grids,
    evaluate_mle,
    fit_forest,
    fit_tree,
    gini,
    grid_search_cv,
    mse,
    predict,
    predict_forest,
    predict_tree,
    variance,
)
from tabsynth.table import CLASSIFICATION, REGRESSION, infer_schema, split

from conftest import make_table
from oracles import oracle_best_split, oracle_cv, random_tiny_dataset

XOR_X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
XOR_Y = np.array([0, 1, 1, 0])


class TestImpurity:
    def test_gini_balanced_binary(self):
        assert gini([0, 0, 1, 1]) == 0.5

    def test_gini_pure(self):
        assert gini([0, 0, 0]) == 0.0

    def test_gini_three_classes(self):
        # 1 - 3*(1/3)^2 = 2/3, frozen from the direct formula.
        assert abs(gini([0, 1, 2]) - 0.6666666666666667) <= 1e-9

    def test_gini_empty(self):
        with pytest.raises(MetricError):
            gini([])

    def test_variance(self):
        assert variance([2.0, 2.0]) == 0.0
        assert abs(variance([0.0, 2.0]) - 1.0) <= 1e-12
        with pytest.raises(MetricError):
            variance([])


class TestMetrics:
    def test_accuracy_bounds(self):
        assert accuracy([0, 1, 1], [0, 1, 0]) == pytest.approx(2 / 3)
        assert 0.0 <= accuracy([0, 1], [1, 0]) <= 1.0

    def test_mse_zero_iff_equal(self):
        assert mse([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert mse([1.0, 2.0], [1.0, 2.5]) > 0.0


class TestFitTree:
    def test_xor_exact(self):
        model = fit_tree(XOR_X, XOR_Y, TreeParams(max_depth=2), CLASSIFICATION)
        assert accuracy(XOR_Y, predict_tree(model, XOR_X)) == 1.0
        assert list(predict_tree(model, XOR_X)) == [0, 1, 1, 0]

    def test_single_class_single_leaf(self):
        X = np.array([[0.0], [1.0], [2.0]])
        y = np.array([5, 5, 5])
        model = fit_tree(X, y, TreeParams(), CLASSIFICATION)
        assert model.root.is_leaf
        assert accuracy(y, predict_tree(model, X)) == 1.0

    def test_memorizes_training_data_unlimited_depth(self):
        rng = random.Random(3)
        X = np.array([[rng.random(), rng.random()] for _ in range(40)])
        y = np.array([rng.randrange(0, 3) for _ in range(40)])
        model = fit_tree(X, y, TreeParams(), CLASSIFICATION)
        assert accuracy(y, predict_tree(model, X)) == 1.0

    def test_regression_memorization(self):
        rng = random.Random(4)
        X = np.array([[rng.random()] for _ in range(25)])
        y = np.array([rng.random() for _ in range(25)])
        model = fit_tree(X, y, TreeParams(criterion=VARIANCE), REGRESSION)
        assert mse(y, predict_tree(model, X)) == 0.0

    def test_max_depth_zero_depth_stops(self):
        model = fit_tree(XOR_X, XOR_Y, TreeParams(max_depth=1), CLASSIFICATION)
        # depth-1 tree cannot express XOR
        assert accuracy(XOR_Y, predict_tree(model, XOR_X)) < 1.0

    def test_min_samples_split(self):
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([0, 0, 1, 1])
        model = fit_tree(X, y, TreeParams(min_samples_split=5), CLASSIFICATION)
        assert model.root.is_leaf

    def test_shape_mismatch(self):
        with pytest.raises(FitError):
            fit_tree(np.zeros((3, 2)), np.array([0, 1]), TreeParams(), CLASSIFICATION)
        with pytest.raises(FitError):
            fit_tree(np.zeros((0, 2)), np.array([]), TreeParams(), CLASSIFICATION)

    def test_criterion_task_agreement(self):
        with pytest.raises(FitError):
            fit_tree(XOR_X, XOR_Y, TreeParams(criterion=VARIANCE), CLASSIFICATION)
        with pytest.raises(FitError):
            fit_tree(XOR_X, XOR_Y.astype(float), TreeParams(criterion=GINI), REGRESSION)

    def test_root_split_matches_oracle_sample(self):
        # Quick version of the exhaustive-oracle acceptance check.
        rng = random.Random(900)
        for _ in range(40):
            for task, criterion in ((CLASSIFICATION, GINI), (REGRESSION, VARIANCE)):
                X, y = random_tiny_dataset(rng, task)
                expected = oracle_best_split(X, y, criterion)
                model = fit_tree(X, y, TreeParams(criterion=criterion), task)
                got = None if model.root.is_leaf else (model.root.feature, model.root.threshold)
                assert got == expected, (X.tolist(), y.tolist(), got, expected)

    def test_accepted_splits_never_increase_impurity(self):
        rng = random.Random(17)
        X = np.array([[rng.randrange(0, 4), rng.randrange(0, 4)] for _ in range(30)])
        y = np.array([rng.randrange(0, 2) for _ in range(30)])
        model = fit_tree(X, y, TreeParams(), CLASSIFICATION)

        def walk(node, Xn, yn):
            if node.is_leaf:
                return
            parent = gini(yn.tolist())
            mask = Xn[:, node.feature] <= node.threshold
            left_idx, right_idx = yn[mask], yn[~mask]
            weighted = (
                len(left_idx) / len(yn) * gini(left_idx.tolist())
                + len(right_idx) / len(yn) * gini(right_idx.tolist())
            )
            assert parent - weighted >= -1e-12
            walk(node.left, Xn[mask], yn[mask])
            walk(node.right, Xn[~mask], yn[~mask])

        walk(model.root, X, y)


class TestPredict:
    def test_single_leaf_constant(self):
        model = fit_tree(np.array([[1.0], [2.0]]), np.array([7, 7]), TreeParams(), CLASSIFICATION)
        assert list(predict_tree(model, np.array([[0.0], [9.0], [4.5]]))) == [7, 7, 7]

    def test_arity_mismatch(self):
        model = fit_tree(XOR_X, XOR_Y, TreeParams(), CLASSIFICATION)
        with pytest.raises(PredictError):
            predict_tree(model, np.zeros((2, 3)))


class TestForest:
    def test_degenerates_to_tree(self):
        rng = random.Random(5)
        X = np.array([[rng.randrange(0, 5), rng.randrange(0, 5)] for _ in range(30)])
        y = np.array([rng.randrange(0, 2) for _ in range(30)])
        tree_params = TreeParams(max_depth=4)
        forest = fit_forest(
            X,
            y,
            ForestParams(n_trees=1, tree=tree_params, seed=0, features_per_split="all", bootstrap=False),
            CLASSIFICATION,
        )
        tree = fit_tree(X, y, tree_params, CLASSIFICATION)
        assert list(predict_forest(forest, X)) == list(predict_tree(tree, X))
        assert forest.trees[0] == tree.root

    def test_same_seed_structure_equal(self):
        rng = random.Random(6)
        X = np.array([[rng.random(), rng.random()] for _ in range(25)])
        y = np.array([rng.randrange(0, 2) for _ in range(25)])
        params = ForestParams(n_trees=7, tree=TreeParams(max_depth=3), seed=11)
        assert fit_forest(X, y, params, CLASSIFICATION) == fit_forest(X, y, params, CLASSIFICATION)

    def test_majority_vote_stub_trees(self):
        forest = FittedModel(
            kind="forest",
            task=CLASSIFICATION,
            n_features=1,
            n_classes=2,
            trees=(TreeNode(value=0), TreeNode(value=0), TreeNode(value=1)),
        )
        assert list(predict_forest(forest, np.array([[0.0]]))) == [0]

    def test_vote_tie_goes_to_lowest_class(self):
        forest = FittedModel(
            kind="forest",
            task=CLASSIFICATION,
            n_features=1,
            n_classes=3,
            trees=(TreeNode(value=2), TreeNode(value=1)),
        )
        assert list(predict_forest(forest, np.array([[0.0]]))) == [1]

    def test_regression_mean(self):
        forest = FittedModel(
            kind="forest",
            task=REGRESSION,
            n_features=1,
            trees=(TreeNode(value=1.0), TreeNode(value=3.0)),
        )
        assert list(predict_forest(forest, np.array([[0.0]]))) == [2.0]

    def test_forest_variance_not_above_single_tree(self):
        # On one fixed noisy dataset, prediction variance across forest seeds
        # must not exceed that of single bootstrap trees.
        rng = random.Random(7)
        X = np.array([[i / 40] for i in range(40)])
        y = np.array([x[0] + rng.gauss(0, 0.3) for x in X])
        tree_preds = []
        forest_preds = []
        for seed in range(20):
            single = fit_forest(
                X, y, ForestParams(n_trees=1, tree=TreeParams(criterion=VARIANCE), seed=seed), REGRESSION
            )
            many = fit_forest(
                X, y, ForestParams(n_trees=25, tree=TreeParams(criterion=VARIANCE), seed=seed), REGRESSION
            )
            tree_preds.append(predict_forest(single, X))
            forest_preds.append(predict_forest(many, X))
        tree_var = np.var(np.stack(tree_preds), axis=0).mean()
        forest_var = np.var(np.stack(forest_preds), axis=0).mean()
        assert forest_var <= tree_var

    def test_param_validation(self):
        with pytest.raises(ConfigError):
            ForestParams(n_trees=0, tree=TreeParams(), seed=0)
        with pytest.raises(ConfigError):
            ForestParams(n_trees=1, tree=TreeParams(), seed=0, features_per_split="most")
        with pytest.raises(ConfigError):
            TreeParams(min_samples_split=1)


class TestGridSearchCv:
    def small_dataset(self):
        rng = random.Random(12)
        X = np.array([[rng.randrange(0, 6), rng.randrange(0, 6)] for _ in range(30)])
        y = np.array([1 if x[0] + x[1] >= 6 else 0 for x in X])
        return X, y

    def test_singleton_grid(self):
        X, y = self.small_dataset()
        cell = TreeParams(max_depth=2)
        best, table = grid_search_cv(X, y, [cell], folds=5, seed=1, task=CLASSIFICATION)
        assert best is cell
        assert len(table) == 1

    def test_matches_brute_force_enumeration(self):
        X, y = self.small_dataset()
        grid = [
            TreeParams(max_depth=d, min_samples_split=m)
            for d in (1, 2, None)
            for m in (2, 10)
        ]
        best, table = grid_search_cv(X, y, grid, folds=5, seed=9, task=CLASSIFICATION)
        oracle_best, oracle_table = oracle_cv(
            X,
            y,
            grid,
            folds=5,
            seed=9,
            task=CLASSIFICATION,
            fit_fn=lambda Xt, yt, cell: fit_tree(Xt, yt, cell, CLASSIFICATION),
            predict_fn=predict_tree,
            metric_fn=accuracy,
        )
        assert best == oracle_best
        for mine, ref in zip(table, oracle_table):
            assert mine["fold_scores"] == ref["fold_scores"]
            assert mine["mean"] == ref["mean"]

    def test_deterministic(self):
        X, y = self.small_dataset()
        grid = [TreeParams(max_depth=d) for d in (1, 2, 3)]
        first = grid_search_cv(X, y, grid, folds=5, seed=4, task=CLASSIFICATION)
        second = grid_search_cv(X, y, grid, folds=5, seed=4, task=CLASSIFICATION)
        assert first[0] == second[0]
        assert [e["mean"] for e in first[1]] == [e["mean"] for e in second[1]]

    def test_fold_partition(self):
        folds = cv_folds(23, 5, seed=3)
        sizes = [len(f) for f in folds]
        assert max(sizes) - min(sizes) <= 1
        everything = sorted(i for f in folds for i in f)
        assert everything == list(range(23))

    def test_too_many_folds(self):
        X = np.zeros((3, 1))
        y = np.array([0, 1, 0])
        with pytest.raises(CvError):
            grid_search_cv(X, y, [TreeParams()], folds=5, seed=0, task=CLASSIFICATION)

    def test_tie_takes_first_cell(self):
        # Both cells describe the same tree on this data, so means tie and
        # the first cell must win.
        X, y = self.small_dataset()
        grid = [TreeParams(max_depth=8), TreeParams(max_depth=None)]
        best, table = grid_search_cv(X, y, grid, folds=5, seed=2, task=CLASSIFICATION)
        assert table[0]["mean"] == table[1]["mean"]
        assert best is grid[0]


def small_eval_tables():
    rng = random.Random(21)
    rows = []
    for _ in range(40):
        a = rng.randrange(0, 8)
        b = rng.randrange(0, 8)
        rows.append((str(a), str(b), "hi" if a + b >= 8 else "lo"))
    table = make_table(("a", "b", "cls"), rows)
    schema = infer_schema(table, "cls")
    pair = split(table, 0.75, seed=2)
    return table, schema, pair


class TestEvaluateMle:
    def test_identity_oracle_bit_for_bit(self):
        _, schema, pair = small_eval_tables()
        grids = {
            DECISION_TREE: [TreeParams(max_depth=d) for d in (2, 4)],
            RANDOM_FOREST: [
                ForestParams(n_trees=t, tree=TreeParams(max_depth=3), seed=77) for t in (5, 10)
            ],
        }
        report = evaluate_mle(pair.train, pair.test, schema, grids=grids, seed=77)

        # Direct path: same public ops, hand-built encoding.
        levels = {
            spec.name: {lex: i for i, lex in enumerate(sorted(spec.levels))}
            for spec in schema.specs
            if spec.levels is not None
        }

        def encode(tbl):
            X = np.array(
                [[float(v) for v in (row[0], row[1])] for row in tbl.rows]
            )
            y = np.array([levels["cls"][row[2]] for row in tbl.rows])
            return X, y

        X_tr, y_tr = encode(pair.train)
        X_te, y_te = encode(pair.test)
        for family, fit_fn in ((DECISION_TREE, fit_tree), (RANDOM_FOREST, fit_forest)):
            best, _ = grid_search_cv(X_tr, y_tr, grids[family], folds=5, seed=77, task=schema.task)
            model = fit_fn(X_tr, y_tr, best, schema.task)
            direct = accuracy(y_te, predict(model, X_te))
            assert report.per_model[family] == direct

    def test_regression_metric_name(self, toy_regression):
        table, schema = toy_regression
        pair = split(table, 0.75, seed=1)
        grids = {
            DECISION_TREE: [TreeParams(max_depth=3, criterion=VARIANCE)],
            RANDOM_FOREST: [
                ForestParams(n_trees=5, tree=TreeParams(max_depth=3, criterion=VARIANCE), seed=1)
            ],
        }
        report = evaluate_mle(pair.train, pair.test, schema, grids=grids, seed=1)
        assert report.metric_name == "mse"
        assert report.task == REGRESSION
        assert set(report.per_model) == {DECISION_TREE, RANDOM_FOREST}

    def test_constant_synthetic_rows_score_majority_frequency(self):
        _, schema, pair = small_eval_tables()
        constant = make_table(("a", "b", "cls"), [("3", "4", "lo")] * 30)
        grids = {
            DECISION_TREE: [TreeParams(max_depth=2)],
            RANDOM_FOREST: [ForestParams(n_trees=3, tree=TreeParams(max_depth=2), seed=5)],
        }
        report = evaluate_mle(constant, pair.test, schema, grids=grids, seed=5)
        freq = sum(1 for row in pair.test.rows if row[2] == "lo") / pair.test.n_rows
        assert report.per_model[DECISION_TREE] == pytest.approx(freq)
        assert report.per_model[RANDOM_FOREST] == pytest.approx(freq)

    def test_empty_synth_rejected(self):
        _, schema, pair = small_eval_tables()
        empty = make_table(("a", "b", "cls"), [])
        with pytest.raises(EvalError, match="empty"):
            evaluate_mle(empty, pair.test, schema)

    def test_header_mismatch_rejected(self):
        _, schema, pair = small_eval_tables()
        wrong = make_table(("x", "b", "cls"), [("1", "2", "hi")])
        with pytest.raises(EvalError, match="do not match"):
            evaluate_mle(wrong, pair.test, schema)

    def test_report_json_shape(self):
        _, schema, pair = small_eval_tables()
        grids = {
            DECISION_TREE: [TreeParams(max_depth=2)],
            RANDOM_FOREST: [ForestParams(n_trees=3, tree=TreeParams(max_depth=2), seed=5)],
        }
        report = evaluate_mle(pair.train, pair.test, schema, grids=grids, seed=5)
        payload = report.to_json_dict()
        assert payload["metric"] == "accuracy"
        assert payload["task"] == CLASSIFICATION
        assert payload["n_synth_rows"] == pair.train.n_rows
        assert set(payload["models"]) == {DECISION_TREE, RANDOM_FOREST}
        assert "score" in payload["models"][DECISION_TREE]
        assert payload["models"][RANDOM_FOREST]["best_params"]["n_trees"] == 3

    def test_default_grids_shape(self):
        grids = default_grids(CLASSIFICATION, seed=9)
        assert len(grids[DECISION_TREE]) == 8
        assert len(grids[RANDOM_FOREST]) == 16
        assert all(cell.criterion == GINI for cell in grids[DECISION_TREE])
        reg = default_grids(REGRESSION, seed=9)
        assert all(cell.tree.criterion == VARIANCE for cell in reg[RANDOM_FOREST])
