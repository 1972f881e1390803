"""Machine-learning-efficiency scoring.

Decision trees and random forests are implemented here directly (rather than
delegated to an ML library) because every choice that affects results is
pinned for reproducibility: candidate thresholds are midpoints between
consecutive distinct sorted values, and all ties resolve to the first option
in deterministic order (lowest feature index, then lowest threshold, then
grid order). Models train on synthetic rows and are scored on real test rows.

Split selection maximizes impurity decrease (gini for classification,
variance for regression). Internally each candidate is ranked by the
single-division score

    (Q_left * n_right + Q_right * n_left) / (n_left * n_right)

where Q is the sum of squared class counts (classification) or the squared
target sum (regression). This is a strictly increasing transform of the
impurity decrease, and evaluating it with one division keeps exactly-tied
candidates exactly tied in float arithmetic on integer-valued inputs, so the
declared tie-breaks are bit-reproducible.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, CvError, EvalError, FitError, MetricError, PredictError
from .table import CATEGORICAL, CLASSIFICATION, NUMERIC, REGRESSION, parse_decimal

GINI = "gini"
VARIANCE = "variance"

METRIC_ACCURACY = "accuracy"
METRIC_MSE = "mse"

DECISION_TREE = "decision_tree"
RANDOM_FOREST = "random_forest"


def gini(labels):
    """Gini impurity 1 - sum_c p_c^2 of a label multiset."""
    labels = list(labels)
    if not labels:
        raise MetricError("gini of an empty label set")
    counts = {}
    for label in labels:
        counts[label] = counts.get(label, 0) + 1
    n = len(labels)
    q = sum(c * c for c in counts.values())
    return 1.0 - q / (n * n)


def variance(values):
    """Population variance, the regression impurity."""
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        raise MetricError("variance of an empty value set")
    mean = float(arr.sum()) / arr.size
    return max(0.0, float((arr * arr).sum()) / arr.size - mean * mean)


def accuracy(y_true, y_pred):
    t = np.asarray(y_true)
    p = np.asarray(y_pred)
    if t.size == 0 or t.shape != p.shape:
        raise MetricError(f"bad shapes for accuracy: {t.shape} vs {p.shape}")
    return float(np.mean(t == p))


def mse(y_true, y_pred):
    t = np.asarray(y_true, dtype=float)
    p = np.asarray(y_pred, dtype=float)
    if t.size == 0 or t.shape != p.shape:
        raise MetricError(f"bad shapes for mse: {t.shape} vs {p.shape}")
    return float(np.mean((t - p) ** 2))


@dataclass(frozen=True)
class TreeParams:
    max_depth: int | None = None  # None means unlimited
    min_samples_split: int = 2
    criterion: str = GINI

    def __post_init__(self):
        if self.min_samples_split < 2:
            raise ConfigError(f"min_samples_split must be >= 2, got {self.min_samples_split}")
        if self.max_depth is not None and self.max_depth < 1:
            raise ConfigError(f"max_depth must be >= 1 or None, got {self.max_depth}")
        if self.criterion not in (GINI, VARIANCE):
            raise ConfigError(f"unknown criterion {self.criterion!r}")


@dataclass(frozen=True)
class ForestParams:
    n_trees: int
    tree: TreeParams
    seed: int
    features_per_split: str | int = "sqrt"  # "sqrt" | "all" | fixed k
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError(f"n_trees must be >= 1, got {self.n_trees}")
        if isinstance(self.features_per_split, str):
            if self.features_per_split not in ("sqrt", "all"):
                raise ConfigError(f"unknown features_per_split {self.features_per_split!r}")
        elif self.features_per_split < 1:
            raise ConfigError(f"features_per_split must be >= 1, got {self.features_per_split}")


@dataclass(frozen=True)
class TreeNode:
    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    value: float | int | None = None

    @property
    def is_leaf(self):
        return self.feature is None


@dataclass(frozen=True)
class FittedModel:
    kind: str  # "tree" | "forest"
    task: str
    n_features: int
    n_classes: int = 0
    root: TreeNode | None = None
    trees: tuple[TreeNode, ...] = ()


def _leaf(y, is_classification, n_classes):
    if is_classification:
        # argmax of bincount takes the lowest class index on ties
        return TreeNode(value=int(np.bincount(y, minlength=n_classes).argmax()))
    return TreeNode(value=float(np.mean(y)))


def _best_split_small(X, y, feature_indices, is_classification):
    """Scalar split search for small nodes.

    Python loops beat numpy dispatch overhead well below ~64 rows. The score
    expression is kept in the exact same shape as the vectorized path
    (integer or running-float operands, one final division), so both paths
    rank exactly-tied candidates identically.
    """
    n = len(y)
    y_list = y.tolist()
    best_feature = None
    best_threshold = None
    best_score = -math.inf
    for j in feature_indices:
        col = X[:, j].tolist()
        order = sorted(range(n), key=col.__getitem__)
        xs = [col[i] for i in order]
        ys = [y_list[i] for i in order]
        feat_best = -math.inf
        feat_threshold = None
        if is_classification:
            left = {}
            right = {}
            for label in ys:
                right[label] = right.get(label, 0) + 1
            q_l = 0
            q_r = sum(c * c for c in right.values())
            for i in range(n - 1):
                label = ys[i]
                c = left.get(label, 0)
                q_l += 2 * c + 1
                left[label] = c + 1
                d = right[label]
                q_r += 1 - 2 * d
                right[label] = d - 1
                if xs[i] != xs[i + 1]:
                    n_l = i + 1
                    n_r = n - n_l
                    score = (q_l * n_r + q_r * n_l) / (n_l * n_r)
                    if score > feat_best:
                        feat_best = score
                        feat_threshold = (xs[i] + xs[i + 1]) / 2.0
        else:
            s_total = 0.0
            for value in ys:
                s_total += value
            s_l = 0.0
            for i in range(n - 1):
                s_l += ys[i]
                if xs[i] != xs[i + 1]:
                    n_l = i + 1
                    n_r = n - n_l
                    s_r = s_total - s_l
                    score = (s_l * s_l * n_r + s_r * s_r * n_l) / (n_l * n_r)
                    if score > feat_best:
                        feat_best = score
                        feat_threshold = (xs[i] + xs[i + 1]) / 2.0
        if feat_threshold is not None and feat_best > best_score:
            best_score = feat_best
            best_feature = j
            best_threshold = feat_threshold
    if best_feature is None:
        return None
    return best_feature, float(best_threshold)


def _best_split(X, y, feature_indices, is_classification, n_classes):
    """Best (feature, threshold) over the candidate features, or None.

    Candidates within a feature are scored in ascending threshold order and
    np.argmax keeps the first maximum; across features, only a strictly
    better score displaces the incumbent. Together that realizes the
    lowest-feature-then-lowest-threshold tie-break.
    """
    n = len(y)
    if n < 64:
        return _best_split_small(X, y, feature_indices, is_classification)
    best_feature = None
    best_threshold = None
    best_score = -math.inf
    if is_classification:
        onehot_template = np.zeros((n, n_classes))
        onehot_template[np.arange(n), y] = 1.0
    for j in feature_indices:
        x = X[:, j]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        boundaries = np.nonzero(xs[:-1] != xs[1:])[0]
        if boundaries.size == 0:
            continue
        n_left = (boundaries + 1).astype(float)
        n_right = n - n_left
        if is_classification:
            cum = np.cumsum(onehot_template[order], axis=0)
            c_left = cum[boundaries]
            c_right = cum[-1] - c_left
            q_left = (c_left * c_left).sum(axis=1)
            q_right = (c_right * c_right).sum(axis=1)
        else:
            s = np.cumsum(y[order])
            s_left = s[boundaries]
            s_right = s[-1] - s_left
            q_left = s_left * s_left
            q_right = s_right * s_right
        scores = (q_left * n_right + q_right * n_left) / (n_left * n_right)
        k = int(np.argmax(scores))
        if scores[k] > best_score:
            best_score = float(scores[k])
            best_feature = j
            b = boundaries[k]
            best_threshold = (xs[b] + xs[b + 1]) / 2.0
    if best_feature is None:
        return None
    return best_feature, float(best_threshold)


def _grow(X, y, depth, params, is_classification, n_classes, rng=None, max_features=None):
    n, n_feat = X.shape
    pure = bool((y == y[0]).all())
    depth_stop = params.max_depth is not None and depth >= params.max_depth
    if pure or depth_stop or n < params.min_samples_split:
        return _leaf(y, is_classification, n_classes)
    if max_features is None or max_features >= n_feat:
        features = range(n_feat)
    else:
        features = sorted(rng.sample(range(n_feat), max_features))
    found = _best_split(X, y, features, is_classification, n_classes)
    if found is None:
        return _leaf(y, is_classification, n_classes)
    feature, threshold = found
    mask = X[:, feature] <= threshold
    return TreeNode(
        feature=feature,
        threshold=threshold,
        left=_grow(X[mask], y[mask], depth + 1, params, is_classification, n_classes, rng, max_features),
        right=_grow(X[~mask], y[~mask], depth + 1, params, is_classification, n_classes, rng, max_features),
    )


def _check_xy(X, y, task, criterion):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise FitError(f"X must be 2-dimensional, got shape {X.shape}")
    if len(X) == 0 or len(X) != len(y):
        raise FitError(f"X has {len(X)} rows but y has {len(y)}")
    if task == CLASSIFICATION:
        if criterion != GINI:
            raise FitError(f"criterion {criterion!r} does not fit classification")
        y = np.asarray(y, dtype=int)
        if (y < 0).any():
            raise FitError("class labels must be non-negative integer codes")
    else:
        if criterion != VARIANCE:
            raise FitError(f"criterion {criterion!r} does not fit regression")
        y = np.asarray(y, dtype=float)
    return X, y


def fit_tree(X, y, params, task):
    """Greedy recursive partitioning with the pinned stopping and tie rules.

    A node becomes a leaf when it is pure, its depth hits max_depth, it holds
    fewer than min_samples_split samples, or no feature has two distinct
    values. Otherwise it takes the maximum-impurity-decrease split, even when
    that decrease is zero, which is what lets parity-style datasets be
    learned exactly.
    """
    X, y = _check_xy(X, y, task, params.criterion)
    is_classification = task == CLASSIFICATION
    n_classes = int(y.max()) + 1 if is_classification else 0
    root = _grow(X, y, 0, params, is_classification, n_classes)
    return FittedModel(
        kind="tree", task=task, n_features=X.shape[1], n_classes=n_classes, root=root
    )


def fit_forest(X, y, params, task):
    """Seeded bagging: per-tree bootstrap resamples and per-node feature draws."""
    X, y = _check_xy(X, y, task, params.tree.criterion)
    is_classification = task == CLASSIFICATION
    n_classes = int(y.max()) + 1 if is_classification else 0
    n, n_feat = X.shape
    if params.features_per_split == "sqrt":
        max_features = max(1, int(math.sqrt(n_feat)))
    elif params.features_per_split == "all":
        max_features = None
    else:
        max_features = min(int(params.features_per_split), n_feat)
    master = random.Random(params.seed)
    tree_seeds = [master.randrange(2**32) for _ in range(params.n_trees)]
    trees = []
    for tree_seed in tree_seeds:
        rng = random.Random(tree_seed)
        if params.bootstrap:
            idx = np.fromiter((rng.randrange(n) for _ in range(n)), dtype=int, count=n)
            Xb, yb = X[idx], y[idx]
        else:
            Xb, yb = X, y
        trees.append(
            _grow(Xb, yb, 0, params.tree, is_classification, n_classes, rng, max_features)
        )
    return FittedModel(
        kind="forest",
        task=task,
        n_features=n_feat,
        n_classes=n_classes,
        trees=tuple(trees),
    )


def _route(node, X, out, idx):
    if node.is_leaf:
        out[idx] = node.value
        return
    mask = X[idx, node.feature] <= node.threshold
    _route(node.left, X, out, idx[mask])
    _route(node.right, X, out, idx[~mask])


def _predict_root(root, X, task):
    out = np.empty(len(X), dtype=int if task == CLASSIFICATION else float)
    _route(root, X, out, np.arange(len(X)))
    return out


def predict_tree(model, X):
    """Route rows through a fitted tree and return leaf values."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise PredictError(
            f"expected {model.n_features} features, got shape {tuple(X.shape)}"
        )
    if model.kind != "tree":
        raise PredictError(f"predict_tree on a {model.kind!r} model")
    return _predict_root(model.root, X, model.task)


def predict_forest(model, X):
    """Majority vote (ties to the lowest class index) or mean over trees."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise PredictError(
            f"expected {model.n_features} features, got shape {tuple(X.shape)}"
        )
    if model.kind != "forest":
        raise PredictError(f"predict_forest on a {model.kind!r} model")
    per_tree = np.stack([_predict_root(t, X, model.task) for t in model.trees])
    if model.task == CLASSIFICATION:
        width = max(model.n_classes, int(per_tree.max()) + 1)
        votes = np.apply_along_axis(np.bincount, 0, per_tree, minlength=width)
        return votes.argmax(axis=0)
    return per_tree.mean(axis=0)


def predict(model, X):
    return predict_tree(model, X) if model.kind == "tree" else predict_forest(model, X)


def _fit_cell(X, y, cell, task):
    if isinstance(cell, TreeParams):
        return fit_tree(X, y, cell, task)
    if isinstance(cell, ForestParams):
        return fit_forest(X, y, cell, task)
    raise ConfigError(f"grid cell of unknown type {type(cell).__name__}")


def cv_folds(n, folds, seed):
    """Seeded shuffle then contiguous fold assignment; sizes differ by <= 1."""
    indices = list(range(n))
    random.Random(seed).shuffle(indices)
    base, rem = divmod(n, folds)
    out = []
    start = 0
    for k in range(folds):
        size = base + (1 if k < rem else 0)
        out.append(np.asarray(indices[start : start + size], dtype=int))
        start += size
    return out


def grid_search_cv(X, y, grid, folds=5, seed=0, task=CLASSIFICATION):
    """Mean validation metric per cell; best cell wins, grid order breaks ties.

    Classification selects max mean accuracy, regression min mean MSE.
    Returns (best_cell, cv_table) where cv_table lists the per-fold scores
    and mean for every cell in grid order.
    """
    X = np.asarray(X, dtype=float)
    n = len(y)
    if folds < 2:
        raise CvError(f"folds must be >= 2, got {folds}")
    if folds > n:
        raise CvError(f"cannot make {folds} folds from {n} rows")
    if not grid:
        raise CvError("empty parameter grid")
    y = np.asarray(y, dtype=int if task == CLASSIFICATION else float)
    fold_idx = cv_folds(n, folds, seed)
    cv_table = []
    for cell in grid:
        scores = []
        for k in range(folds):
            val = fold_idx[k]
            train = np.concatenate([fold_idx[j] for j in range(folds) if j != k])
            model = _fit_cell(X[train], y[train], cell, task)
            pred = predict(model, X[val])
            if task == CLASSIFICATION:
                scores.append(accuracy(y[val], pred))
            else:
                scores.append(mse(y[val], pred))
        cv_table.append({"params": cell, "fold_scores": scores, "mean": sum(scores) / folds})
    best = cv_table[0]
    for entry in cv_table[1:]:
        if task == CLASSIFICATION:
            if entry["mean"] > best["mean"]:
                best = entry
        elif entry["mean"] < best["mean"]:
            best = entry
    return best["params"], cv_table


def default_grids(task, seed):
    """The pinned default search grids for both model families."""
    criterion = GINI if task == CLASSIFICATION else VARIANCE
    tree_grid = [
        TreeParams(max_depth=d, min_samples_split=m, criterion=criterion)
        for d in (3, 5, 8, None)
        for m in (2, 10)
    ]
    forest_grid = [
        ForestParams(n_trees=t, tree=tp, seed=seed, features_per_split="sqrt", bootstrap=True)
        for tp in tree_grid
        for t in (50, 100)
    ]
    return {DECISION_TREE: tree_grid, RANDOM_FOREST: forest_grid}


def params_to_dict(cell):
    if isinstance(cell, TreeParams):
        return {
            "max_depth": cell.max_depth,
            "min_samples_split": cell.min_samples_split,
            "criterion": cell.criterion,
        }
    return {
        "n_trees": cell.n_trees,
        "features_per_split": cell.features_per_split,
        "bootstrap": cell.bootstrap,
        "seed": cell.seed,
        "tree": params_to_dict(cell.tree),
    }


@dataclass
class MleReport:
    task: str
    metric_name: str
    per_model: dict[str, float]
    best_params: dict[str, dict]
    n_synth_rows: int
    seeds: dict[str, int]

    def to_json_dict(self):
        return {
            "task": self.task,
            "metric": self.metric_name,
            "models": {
                family: {
                    "score": self.per_model[family],
                    "best_params": self.best_params[family],
                }
                for family in sorted(self.per_model)
            },
            "n_synth_rows": self.n_synth_rows,
            "seeds": self.seeds,
        }


class TableEncoder:
    """Lexeme table -> numeric matrix, shared by train and test sides.

    Numeric cells parse as floats. Categorical cells map to the index of
    their level in a sorted level list built from the schema plus any levels
    observed in the supplied tables, so unseen synthetic lexemes still encode
    deterministically.
    """

    def __init__(self, schema, tables):
        self.schema = schema
        self.levels = {}
        for j, spec in enumerate(schema.specs):
            if spec.kind == CATEGORICAL:
                observed = set(spec.levels)
                for table in tables:
                    observed.update(table.column(spec.name))
                ordered = sorted(observed)
                self.levels[spec.name] = {lex: i for i, lex in enumerate(ordered)}

    def encode(self, table):
        features = []
        target = None
        for spec in self.schema.specs:
            cells = table.column(spec.name)
            if spec.kind == NUMERIC:
                parsed = [parse_decimal(c) for c in cells]
                if any(v is None for v in parsed):
                    raise EvalError(f"column {spec.name!r} has non-numeric cells")
                column = np.asarray(parsed, dtype=float)
            else:
                index = self.levels[spec.name]
                column = np.asarray([index[c] for c in cells], dtype=float)
            if spec.is_target:
                if self.schema.task == CLASSIFICATION:
                    target = column.astype(int)
                else:
                    target = column
            else:
                features.append(column)
        X = np.column_stack(features) if features else np.empty((table.n_rows, 0))
        return X, target


def evaluate_mle(synth, real_test, schema, grids=None, seed=0):
    """Grid-search on synthetic rows, refit the winner, score on real rows.

    `synth` may be a SyntheticTable or a bare Table sharing the schema.
    Classification reports accuracy, regression reports MSE.
    """
    synth_table = getattr(synth, "table", synth)
    if synth_table.n_rows == 0:
        raise EvalError("empty synthetic table")
    for name, table in (("synthetic", synth_table), ("test", real_test)):
        if table.columns != schema.columns:
            raise EvalError(
                f"{name} columns {table.columns} do not match schema {schema.columns}"
            )
    encoder = TableEncoder(schema, [synth_table, real_test])
    X_synth, y_synth = encoder.encode(synth_table)
    X_test, y_test = encoder.encode(real_test)
    if grids is None:
        grids = default_grids(schema.task, seed)
    per_model = {}
    best_params = {}
    for family in (DECISION_TREE, RANDOM_FOREST):
        best, _ = grid_search_cv(
            X_synth, y_synth, grids[family], folds=5, seed=seed, task=schema.task
        )
        model = _fit_cell(X_synth, y_synth, best, schema.task)
        pred = predict(model, X_test)
        if schema.task == CLASSIFICATION:
            per_model[family] = accuracy(y_test, pred)
        else:
            per_model[family] = mse(y_test, pred)
        best_params[family] = params_to_dict(best)
    return MleReport(
        task=schema.task,
        metric_name=METRIC_ACCURACY if schema.task == CLASSIFICATION else METRIC_MSE,
        per_model=per_model,
        best_params=best_params,
        n_synth_rows=synth_table.n_rows,
        seeds={"cv": seed},
    )
