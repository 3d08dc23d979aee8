"""
Gradient-boosted regression trees with a squared-error objective.

Exact greedy split finding over presorted feature columns, vector-valued
leaves (one tree for all outputs) or one tree per output, row and column
subsampling from a seeded generator.
"""
import json
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import BadConfig, DimensionMismatch, EmptyDataset, SchemaError, VersionMismatch

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1


class MultiStrategy(str, Enum):
    MULTI_OUTPUT_TREE = "multi_output_tree"
    ONE_OUTPUT_PER_TREE = "one_output_per_tree"


@dataclass(frozen=True)
class GbtParams:
    n_estimators: int = 200
    max_depth: int = 7
    learning_rate: float = 0.5
    min_child_weight: float = 5.0
    subsample: float = 0.9
    colsample_bytree: float = 1.0
    reg_lambda: float = 1.0
    multi_strategy: MultiStrategy = MultiStrategy.MULTI_OUTPUT_TREE
    seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "multi_strategy", MultiStrategy(self.multi_strategy))
        except ValueError:
            raise BadConfig(f"Unknown multi_strategy '{self.multi_strategy}'") from None
        if self.n_estimators < 1:
            raise BadConfig(f"n_estimators must be at least 1, got {self.n_estimators}")
        if self.max_depth < 1:
            raise BadConfig(f"max_depth must be at least 1, got {self.max_depth}")
        if not 0 < self.subsample <= 1:
            raise BadConfig(f"subsample must be in (0, 1], got {self.subsample}")
        if not 0 < self.colsample_bytree <= 1:
            raise BadConfig(f"colsample_bytree must be in (0, 1], got {self.colsample_bytree}")
        if self.reg_lambda < 0:
            raise BadConfig(f"reg_lambda must be non-negative, got {self.reg_lambda}")
        if self.min_child_weight < 0:
            raise BadConfig(f"min_child_weight must be non-negative, got {self.min_child_weight}")

    def to_dict(self) -> dict:
        document = asdict(self)
        document["multi_strategy"] = self.multi_strategy.value
        return document

    @classmethod
    def from_dict(cls, document: dict) -> "GbtParams":
        known = {name: document[name] for name in cls.__dataclass_fields__ if name in document}
        return cls(**known)


class RegressionTree:
    """
    Flat-array regression tree, node 0 is the root.

    feature[i] < 0 marks a leaf. A row goes left when x[feature] < threshold
    or the value is missing.
    """

    def __init__(
        self,
        feature: Sequence[int],
        threshold: Sequence[float],
        left: Sequence[int],
        right: Sequence[int],
        values: Sequence[Sequence[float]],
        output_slice: Sequence[int],
    ):
        self.feature = np.asarray(feature, dtype=int)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=int)
        self.right = np.asarray(right, dtype=int)
        self.output_slice = tuple(int(k) for k in output_slice)
        self.values = np.asarray(values, dtype=float).reshape(len(self.feature), len(self.output_slice))
        # plain lists for the single-row path
        self._feature = self.feature.tolist()
        self._threshold = self.threshold.tolist()
        self._left = self.left.tolist()
        self._right = self.right.tolist()
        self._values = self.values.tolist()

    @property
    def n_nodes(self) -> int:
        return len(self._feature)

    def leaf_index_one(self, x: List[float]) -> int:
        node = 0
        feature = self._feature
        while feature[node] >= 0:
            value = x[feature[node]]
            node = self._left[node] if (value < self._threshold[node] or value != value) else self._right[node]
        return node

    def leaf_indices(self, X: np.ndarray) -> np.ndarray:
        rows = np.arange(X.shape[0])
        node = np.zeros(X.shape[0], dtype=int)
        while True:
            feature = self.feature[node]
            is_split = feature >= 0
            if not is_split.any():
                return node
            value = X[rows, np.where(is_split, feature, 0)]
            go_left = (value < self.threshold[node]) | np.isnan(value)
            node = np.where(is_split, np.where(go_left, self.left[node], self.right[node]), node)

    def depth(self) -> int:
        """Number of splits on the longest root-to-leaf path"""
        deepest = 0
        stack = [(0, 0)]
        while stack:
            node, depth = stack.pop()
            if self._feature[node] < 0:
                deepest = max(deepest, depth)
            else:
                stack.append((self._left[node], depth + 1))
                stack.append((self._right[node], depth + 1))
        return deepest

    def to_dict(self, include_slice: bool) -> dict:
        nodes = []
        for i in range(self.n_nodes):
            if self._feature[i] < 0:
                nodes.append({"kind": "leaf", "values": self._values[i]})
            else:
                nodes.append(
                    {
                        "kind": "split",
                        "feature": self._feature[i],
                        "threshold": self._threshold[i],
                        "left": self._left[i],
                        "right": self._right[i],
                        "missing_goes_left": True,
                    }
                )
        document: Dict = {"nodes": nodes}
        if include_slice:
            document["output_slice"] = list(self.output_slice)
        return document

    @classmethod
    def from_dict(cls, document: dict, output_dim: int, feature_dim: int) -> "RegressionTree":
        output_slice = [int(k) for k in document.get("output_slice", range(output_dim))]
        if not output_slice or any(not 0 <= k < output_dim for k in output_slice):
            raise SchemaError(f"Invalid output_slice {output_slice} for {output_dim} outputs")
        nodes = document["nodes"]
        if not nodes:
            raise SchemaError("Tree has no nodes")
        feature, threshold, left, right, values = [], [], [], [], []
        for i, node in enumerate(nodes):
            kind = node["kind"]
            if kind == "leaf":
                leaf_values = [float(v) for v in node["values"]]
                if len(leaf_values) != len(output_slice):
                    raise SchemaError(f"Leaf {i} holds {len(leaf_values)} values, expected {len(output_slice)}")
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                values.append(leaf_values)
            elif kind == "split":
                f, l, r = int(node["feature"]), int(node["left"]), int(node["right"])
                if not 0 <= f < feature_dim:
                    raise SchemaError(f"Split {i} uses feature {f}, model has {feature_dim}")
                if not (i < l < len(nodes) and i < r < len(nodes)):
                    raise SchemaError(f"Split {i} points to invalid children ({l}, {r})")
                feature.append(f)
                threshold.append(float(node["threshold"]))
                left.append(l)
                right.append(r)
                values.append([0.0] * len(output_slice))
            else:
                raise SchemaError(f"Unknown node kind '{kind}'")
        return cls(feature, threshold, left, right, values, output_slice)


@dataclass(eq=False)
class GbtModel:
    """prediction = base_score + learning_rate * sum of tree outputs"""
    base_score: np.ndarray
    trees: List[RegressionTree]
    params: GbtParams
    feature_dim: int
    output_dim: int
    history: List[Dict[str, float]] = field(default_factory=list, repr=False)

    @property
    def learning_rate(self) -> float:
        return self.params.learning_rate


class _TreeBuilder:
    """Grows one tree on presorted row lists, one list per sampled column"""

    def __init__(self, X: np.ndarray, grad: np.ndarray, cols: np.ndarray, params: GbtParams):
        self.X = X
        self.grad = grad
        self.cols = cols
        self.params = params
        self.feature: List[int] = []
        self.threshold: List[float] = []
        self.left: List[int] = []
        self.right: List[int] = []
        self.values: List[np.ndarray] = []

    def build(self, sorted_rows: List[np.ndarray], output_slice: Sequence[int]) -> RegressionTree:
        self._grow(sorted_rows, depth=0)
        return RegressionTree(self.feature, self.threshold, self.left, self.right, self.values, output_slice)

    def _new_leaf(self, value: np.ndarray) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.values.append(value)
        return len(self.feature) - 1

    def _grow(self, sorted_rows: List[np.ndarray], depth: int) -> int:
        rows = sorted_rows[0]
        g_sum = self.grad[rows].sum(axis=0)
        h_sum = float(len(rows))
        node = self._new_leaf(-g_sum / (h_sum + self.params.reg_lambda))
        if depth >= self.params.max_depth:
            return node

        split = self._best_split(sorted_rows, g_sum, h_sum)
        if split is None:
            return node
        feature, threshold = split

        go_left = np.zeros(self.X.shape[0], dtype=bool)
        go_left[rows[self.X[rows, feature] < threshold]] = True
        left_rows = [s[go_left[s]] for s in sorted_rows]
        right_rows = [s[~go_left[s]] for s in sorted_rows]

        self.feature[node] = feature
        self.threshold[node] = threshold
        self.values[node] = np.zeros_like(g_sum)
        self.left[node] = self._grow(left_rows, depth + 1)
        self.right[node] = self._grow(right_rows, depth + 1)
        return node

    def _best_split(self, sorted_rows: List[np.ndarray], g_sum: np.ndarray, h_sum: float) -> Optional[Tuple[int, float]]:
        """
        Highest-gain split over the sampled columns, or None if no split has positive gain.

        Ties go to the lower feature index, then the lower threshold.
        """
        lam = self.params.reg_lambda
        mcw = self.params.min_child_weight
        parent_score = float((g_sum**2).sum()) / (h_sum + lam)
        best_gain = 0.0
        best: Optional[Tuple[int, float]] = None

        for feature, rows in zip(self.cols, sorted_rows):
            m = len(rows)
            if m < 2:
                continue
            xs = self.X[rows, feature]
            g_left = np.cumsum(self.grad[rows], axis=0)[:-1]
            h_left = np.arange(1, m, dtype=float)
            h_right = m - h_left
            g_right = g_sum - g_left
            valid = (xs[:-1] < xs[1:]) & (h_left >= mcw) & (h_right >= mcw)
            if not valid.any():
                continue
            gain = 0.5 * (
                (g_left**2).sum(axis=1) / (h_left + lam) + (g_right**2).sum(axis=1) / (h_right + lam) - parent_score
            )
            gain = np.where(valid, gain, -np.inf)
            pos = int(np.argmax(gain))
            if gain[pos] > best_gain:
                lo, hi = xs[pos], xs[pos + 1]
                threshold = 0.5 * (lo + hi)
                if not lo < threshold:
                    threshold = hi
                best_gain = float(gain[pos])
                best = (int(feature), float(threshold))
        return best


def _sample(rng: np.random.Generator, n: int, fraction: float) -> np.ndarray:
    if fraction >= 1.0:
        return np.arange(n)
    size = max(1, int(round(fraction * n)))
    return np.sort(rng.choice(n, size=size, replace=False))


def _rmse(residual: np.ndarray) -> float:
    return float(np.sqrt(np.mean(residual**2)))


def fit(
    rows,
    targets,
    params: GbtParams = GbtParams(),
    eval_set: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> GbtModel:
    """
    Boosts params.n_estimators rounds of trees on the residuals of the running prediction.

    Deterministic for a given params.seed. The per-round training (and, with
    eval_set, validation) RMSE lands on model.history.
    """
    X = np.asarray(rows, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.ndim != 2 or Y.ndim != 2:
        raise DimensionMismatch(f"Expected 2-D features and targets, got {X.shape} and {Y.shape}")
    if X.shape[0] != Y.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} feature rows but {Y.shape[0]} target rows")
    if X.shape[0] < 2:
        raise EmptyDataset(f"Need at least 2 rows to fit, got {X.shape[0]}")
    if np.isnan(Y).any():
        raise SchemaError("Targets contain NaN")

    n_rows, feature_dim = X.shape
    output_dim = Y.shape[1]
    base_score = Y.mean(axis=0)
    order = np.argsort(X, axis=0, kind="stable")
    rng = np.random.default_rng(params.seed)

    acc = np.zeros_like(Y)
    if eval_set is not None:
        X_val = np.asarray(eval_set[0], dtype=float)
        Y_val = np.asarray(eval_set[1], dtype=float).reshape(X_val.shape[0], output_dim)
        acc_val = np.zeros_like(Y_val)

    if params.multi_strategy == MultiStrategy.MULTI_OUTPUT_TREE:
        slices = [tuple(range(output_dim))]
    else:
        slices = [(k,) for k in range(output_dim)]

    trees: List[RegressionTree] = []
    history: List[Dict[str, float]] = []
    report_every = max(1, params.n_estimators // 10)
    logger.info(
        f"Fitting {params.n_estimators} rounds on {n_rows} rows x {feature_dim} features, "
        f"{output_dim} outputs ({params.multi_strategy.value})"
    )

    for round_no in range(1, params.n_estimators + 1):
        grad = (base_score + params.learning_rate * acc) - Y
        for output_slice in slices:
            in_sample = np.zeros(n_rows, dtype=bool)
            in_sample[_sample(rng, n_rows, params.subsample)] = True
            cols = _sample(rng, feature_dim, params.colsample_bytree)
            sorted_rows = [order[:, f][in_sample[order[:, f]]] for f in cols]
            tree = _TreeBuilder(X, grad[:, list(output_slice)], cols, params).build(sorted_rows, output_slice)
            trees.append(tree)
            acc[:, list(output_slice)] += tree.values[tree.leaf_indices(X)]
            if eval_set is not None:
                acc_val[:, list(output_slice)] += tree.values[tree.leaf_indices(X_val)]

        entry = {"round": round_no, "train_rmse": _rmse(base_score + params.learning_rate * acc - Y)}
        if eval_set is not None:
            entry["val_rmse"] = _rmse(base_score + params.learning_rate * acc_val - Y_val)
        history.append(entry)
        logger.debug(f"Round {round_no}: {entry}")
        if round_no % report_every == 0 or round_no == params.n_estimators:
            logger.info(f"Round {round_no}/{params.n_estimators}: {entry}")

    return GbtModel(
        base_score=base_score,
        trees=trees,
        params=params,
        feature_dim=feature_dim,
        output_dim=output_dim,
        history=history,
    )


def predict(model: GbtModel, features) -> np.ndarray:
    """
    One row -> (output_dim,) vector; a batch -> (n, output_dim), row-aligned.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != model.feature_dim:
            raise DimensionMismatch(f"Model expects {model.feature_dim} features, got {x.shape[0]}")
        values = x.tolist()
        acc = [0.0] * model.output_dim
        for tree in model.trees:
            leaf_values = tree._values[tree.leaf_index_one(values)]
            for pos, output in enumerate(tree.output_slice):
                acc[output] += leaf_values[pos]
        return model.base_score + model.learning_rate * np.array(acc)

    if x.ndim != 2 or x.shape[1] != model.feature_dim:
        raise DimensionMismatch(f"Model expects (n, {model.feature_dim}) features, got {x.shape}")
    acc = np.zeros((x.shape[0], model.output_dim))
    for tree in model.trees:
        acc[:, list(tree.output_slice)] += tree.values[tree.leaf_indices(x)]
    return model.base_score + model.learning_rate * acc


def serialize(model: GbtModel) -> dict:
    one_per_tree = model.params.multi_strategy == MultiStrategy.ONE_OUTPUT_PER_TREE
    return {
        "version": MODEL_FORMAT_VERSION,
        "feature_dim": model.feature_dim,
        "output_dim": model.output_dim,
        "base_score": [float(v) for v in model.base_score],
        "learning_rate": model.learning_rate,
        "multi_strategy": model.params.multi_strategy.value,
        "trees": [tree.to_dict(include_slice=one_per_tree) for tree in model.trees],
        "params": model.params.to_dict(),
    }


def deserialize(document: dict) -> GbtModel:
    if not isinstance(document, dict):
        raise SchemaError(f"Model document must be an object, got {type(document).__name__}")
    version = document.get("version")
    if version is None:
        raise SchemaError("Model document has no version")
    if version != MODEL_FORMAT_VERSION:
        raise VersionMismatch(f"Model format version {version} is not supported (expected {MODEL_FORMAT_VERSION})")
    try:
        feature_dim = int(document["feature_dim"])
        output_dim = int(document["output_dim"])
        base_score = np.array([float(v) for v in document["base_score"]])
        params = GbtParams.from_dict(
            {**document["params"], "learning_rate": float(document["learning_rate"]), "multi_strategy": document["multi_strategy"]}
        )
        trees = [RegressionTree.from_dict(tree, output_dim, feature_dim) for tree in document["trees"]]
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, SchemaError):
            raise
        raise SchemaError(f"Invalid model document: {type(e).__name__}: {e}") from e
    if base_score.shape[0] != output_dim:
        raise SchemaError(f"base_score has {base_score.shape[0]} entries, expected {output_dim}")
    return GbtModel(base_score=base_score, trees=trees, params=params, feature_dim=feature_dim, output_dim=output_dim)


def save_model(model: GbtModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(serialize(model), f)
    return path


def load_model(path: Union[str, Path]) -> GbtModel:
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path} is not a valid model document: {e}") from e
    return deserialize(document)


def count_parameters(model: GbtModel) -> int:
    """Split nodes plus leaf values, the way tree ensembles are usually sized"""
    return sum(
        int((tree.feature >= 0).sum()) + int((tree.feature < 0).sum()) * len(tree.output_slice) for tree in model.trees
    )
