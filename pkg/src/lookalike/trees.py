"""Extremely randomized trees for binary class-probability estimation.

Each tree is grown on the full training set (no bootstrap). At every node a
fixed number of candidate features is drawn among those with non-zero value
range, one uniform threshold is drawn per candidate, and the split with the
largest Gini impurity decrease wins. Leaves store the raw label-1 fraction;
the ensemble posterior is the mean leaf fraction across trees.

Tree t consumes an RNG stream derived from (rng_seed, t), so the fitted
model does not depend on tree construction order, and permuting training
rows leaves the model unchanged (all per-node statistics are set functions
of the node's samples).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .data import child_seed
from .errors import DataError
from .training import BoundingBox, TrainingSet

FORMAT_VERSION = 1
LEAF = -1


@dataclass
class TreeParams:
    n_trees: int = 100
    n_candidate_features: int | None = None  # None -> ceil(sqrt(n_features))
    min_samples_split: int = 2
    leaf_smoothing: float = 0.0

    def __post_init__(self):
        if self.n_trees < 1:
            raise DataError("need at least one tree")
        if self.min_samples_split < 2:
            raise DataError("min_samples_split must be >= 2")
        if self.leaf_smoothing < 0:
            raise DataError("leaf_smoothing must be non-negative")

    def candidates_for(self, n_features: int) -> int:
        if self.n_candidate_features is None:
            return math.ceil(math.sqrt(n_features))
        return max(1, min(self.n_candidate_features, n_features))


@dataclass
class Posterior:
    """Binary class-membership probabilities; p0 is stored as 1 - p1."""

    p1: float

    def __post_init__(self):
        if not 0.0 <= self.p1 <= 1.0:
            raise DataError(f"p1 out of [0, 1]: {self.p1}")

    @property
    def p0(self) -> float:
        return 1.0 - self.p1


@dataclass
class Tree:
    """Flat node arrays; feature == -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray


@dataclass
class TreeEnsemble:
    trees: list[Tree]
    params: TreeParams
    n_features: int
    rng_seed: int
    training_hash: str = ""

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def _gini(ones: float, n: float) -> float:
    p = ones / n
    return 2.0 * p * (1.0 - p)


def grow_tree(
    X: np.ndarray, y: np.ndarray, params: TreeParams, tree_index: int, rng_seed: int
) -> Tree:
    """Grow one extremely randomized tree on the full sample."""
    rng = np.random.default_rng(child_seed(rng_seed, "tree", tree_index))
    n_features = X.shape[1]
    n_candidates = params.candidates_for(n_features)
    cols = [np.ascontiguousarray(X[:, j]) for j in range(n_features)]
    y = np.ascontiguousarray(y, dtype=np.float64)

    feature, threshold, left, right, value, count = [], [], [], [], [], []

    def new_node() -> int:
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(0.0)
        count.append(0)
        return len(feature) - 1

    def make_leaf(node: int, ones: float, n: int) -> None:
        alpha = params.leaf_smoothing
        value[node] = (ones + alpha) / (n + 2.0 * alpha)
        count[node] = n

    # Depth-first, left child first, so the RNG stream visits nodes in a
    # fixed pre-order regardless of how the split sets were produced.
    root = new_node()
    stack = [(np.arange(X.shape[0]), root)]
    while stack:
        idx, node = stack.pop()
        n = idx.size
        ones = float(y[idx].sum())
        if ones == 0.0 or ones == n or n < params.min_samples_split:
            make_leaf(node, ones, n)
            continue
        lo = np.empty(n_features)
        hi = np.empty(n_features)
        for j in range(n_features):
            vals = cols[j][idx]
            lo[j] = vals.min()
            hi[j] = vals.max()
        eligible = np.flatnonzero(hi > lo)
        if eligible.size == 0:
            make_leaf(node, ones, n)  # contradictory duplicates
            continue
        k = min(n_candidates, eligible.size)
        feats = rng.choice(eligible, size=k, replace=False)

        parent_gini = _gini(ones, n)
        best_gain = -np.inf
        best = None
        for f in feats:
            # Keep the threshold strictly inside (min, max); give up redrawing
            # when the interval is too narrow to contain another float.
            t = rng.uniform(lo[f], hi[f])
            for _ in range(8):
                if t != lo[f]:
                    break
                t = rng.uniform(lo[f], hi[f])
            go_left = cols[f][idx] <= t
            nl = int(go_left.sum())
            nr = n - nl
            ones_l = float(y[idx[go_left]].sum())
            ones_r = ones - ones_l
            child = (nl * _gini(ones_l, nl) + nr * _gini(ones_r, nr)) / n
            gain = parent_gini - child
            if gain > best_gain:
                best_gain = gain
                best = (int(f), float(t), go_left)
        f, t, go_left = best
        feature[node] = f
        threshold[node] = t
        count[node] = n
        left_id = new_node()
        right_id = new_node()
        left[node] = left_id
        right[node] = right_id
        stack.append((idx[~go_left], right_id))
        stack.append((idx[go_left], left_id))

    return Tree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(value, dtype=np.float64),
        count=np.asarray(count, dtype=np.int64),
    )


def training_hash(train: TrainingSet) -> str:
    h = hashlib.sha256()
    h.update(repr(train.points.shape).encode())
    h.update(train.points.tobytes())
    h.update(train.labels.tobytes())
    return h.hexdigest()


def fit(
    train: TrainingSet,
    params: TreeParams | None = None,
    rng_seed: int = 0,
    allow_single_class: bool = False,
) -> TreeEnsemble:
    """Fit the ensemble; every tree sees the full training set."""
    params = params or TreeParams()
    if train.points.shape[0] == 0:
        raise DataError("empty training set")
    classes = np.unique(train.labels)
    if classes.size < 2 and not allow_single_class:
        raise DataError("training set has a single class")
    trees = [
        grow_tree(train.points, train.labels, params, t, rng_seed)
        for t in range(params.n_trees)
    ]
    return TreeEnsemble(
        trees=trees,
        params=params,
        n_features=train.points.shape[1],
        rng_seed=rng_seed,
        training_hash=training_hash(train),
    )


def _tree_scores(tree: Tree, X: np.ndarray) -> np.ndarray:
    node = np.zeros(X.shape[0], dtype=np.int32)
    while True:
        feats = tree.feature[node]
        active = np.flatnonzero(feats >= 0)
        if active.size == 0:
            break
        at = node[active]
        go_left = X[active, tree.feature[at]] <= tree.threshold[at]
        node[active] = np.where(go_left, tree.left[at], tree.right[at])
    return tree.value[node]


def predict_scores(model: TreeEnsemble, X) -> np.ndarray:
    """Posterior p(1|x) for each row of X: mean leaf fraction over trees."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.n_features:
        raise DataError(
            f"model expects {model.n_features} features, got {X.shape[1]}"
        )
    total = np.zeros(X.shape[0])
    for tree in model.trees:
        total += _tree_scores(tree, X)
    return total / model.n_trees


def predict_proba(model: TreeEnsemble, x) -> Posterior:
    return Posterior(p1=float(predict_scores(model, x)[0]))


def predict_class(model: TreeEnsemble, x) -> int:
    """Most probable class; the p1 == 0.5 tie goes to class 1."""
    return 1 if predict_proba(model, x).p1 >= 0.5 else 0


def decision_grid(model: TreeEnsemble, box: BoundingBox, resolution: int):
    """p1 on a resolution x resolution lattice over a 2-D box.

    Returns (xs, ys, values) with values[i, j] = p1 at (xs[i], ys[j]).
    """
    if box.n_dims != 2:
        raise DataError("decision grids are defined for 2-D boxes")
    if resolution < 2:
        raise DataError("resolution must be >= 2")
    xs = np.linspace(box.lows[0], box.highs[0], resolution)
    ys = np.linspace(box.lows[1], box.highs[1], resolution)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    values = predict_scores(model, pts).reshape(resolution, resolution)
    return xs, ys, values


def save_model(path, model: TreeEnsemble) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "n_features": model.n_features,
        "rng_seed": model.rng_seed,
        "training_hash": model.training_hash,
        "params": {
            "n_trees": model.params.n_trees,
            "n_candidate_features": model.params.n_candidate_features,
            "min_samples_split": model.params.min_samples_split,
            "leaf_smoothing": model.params.leaf_smoothing,
        },
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "value": t.value.tolist(),
                "count": t.count.tolist(),
            }
            for t in model.trees
        ],
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(doc, fh)


def load_model(path) -> TreeEnsemble:
    with open(path, "r", encoding="ascii") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported model format {doc.get('format_version')!r}")
    trees = [
        Tree(
            feature=np.asarray(t["feature"], dtype=np.int32),
            threshold=np.asarray(t["threshold"], dtype=np.float64),
            left=np.asarray(t["left"], dtype=np.int32),
            right=np.asarray(t["right"], dtype=np.int32),
            value=np.asarray(t["value"], dtype=np.float64),
            count=np.asarray(t["count"], dtype=np.int64),
        )
        for t in doc["trees"]
    ]
    params = TreeParams(**doc["params"])
    return TreeEnsemble(
        trees=trees,
        params=params,
        n_features=doc["n_features"],
        rng_seed=doc["rng_seed"],
        training_hash=doc["training_hash"],
    )
