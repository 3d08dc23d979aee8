"""
Gradient-boosted trees: split search, boosting dynamics, prediction and the model document.
"""
import json

import numpy as np
import pytest

from errors import BadConfig, DimensionMismatch, EmptyDataset, SchemaError, VersionMismatch
from gbt import (
    GbtModel,
    GbtParams,
    MultiStrategy,
    RegressionTree,
    count_parameters,
    deserialize,
    fit,
    load_model,
    predict,
    save_model,
    serialize,
)


def _random_regression(n_rows=200, n_features=4, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n_rows, n_features))
    Y = np.column_stack([np.sin(X[:, 0]) + 0.3 * X[:, 1], X[:, 2] * X[:, 3]]) + 0.05 * rng.normal(size=(n_rows, 2))
    return X, Y


def _gain(grad, mask, lam):
    def score(g, h):
        return float((g.sum(axis=0) ** 2).sum()) / (h + lam)

    left, right = grad[mask], grad[~mask]
    return 0.5 * (score(left, len(left)) + score(right, len(right)) - score(grad, len(grad)))


def _brute_force_split(X, grad, lam, mcw):
    """Best (gain, feature, threshold) over every midpoint of every column"""
    best = (0.0, None, None)
    for feature in range(X.shape[1]):
        values = np.unique(X[:, feature])
        for lo, hi in zip(values[:-1], values[1:]):
            threshold = 0.5 * (lo + hi)
            mask = X[:, feature] < threshold
            if mask.sum() < mcw or (~mask).sum() < mcw:
                continue
            gain = _gain(grad, mask, lam)
            if gain > best[0]:
                best = (gain, feature, threshold)
    return best


def _exact_tree_predictions(X, grad, rows, depth, max_depth, lam, mcw, out):
    """Grows a reference tree by exhaustive search and writes each row's leaf value into out"""
    leaf = -grad[rows].sum(axis=0) / (len(rows) + lam)
    _, feature, threshold = _brute_force_split(X[rows], grad[rows], lam, mcw) if depth < max_depth else (0.0, None, None)
    if feature is None:
        out[rows] = leaf
        return
    goes_left = X[rows, feature] < threshold
    _exact_tree_predictions(X, grad, rows[goes_left], depth + 1, max_depth, lam, mcw, out)
    _exact_tree_predictions(X, grad, rows[~goes_left], depth + 1, max_depth, lam, mcw, out)


class TestFit:

    def test_constant_targets(self):
        X = np.random.default_rng(1).normal(size=(8, 3))
        model = fit(X, np.full(8, 0.5), GbtParams(n_estimators=3))
        np.testing.assert_array_equal(predict(model, X), np.full((8, 1), 0.5))
        assert all(tree.n_nodes == 1 for tree in model.trees)

    def test_single_split_on_step_data(self):
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([0.0, 0.0, 1.0, 1.0])
        params = GbtParams(n_estimators=1, max_depth=1, learning_rate=1.0, reg_lambda=0.0, min_child_weight=1, subsample=1.0)
        model = fit(X, y, params)
        tree = model.trees[0]
        assert tree.feature[0] == 0
        assert 1.0 < tree.threshold[0] <= 2.0
        assert sorted(tree.values[[tree.left[0], tree.right[0]], 0].tolist()) == [-0.5, 0.5]
        np.testing.assert_array_equal(predict(model, X)[:, 0], y)
        assert count_parameters(model) == 3

    @pytest.mark.parametrize("seed", range(30))
    def test_root_split_matches_exhaustive_search(self, seed):
        rng = np.random.default_rng(seed)
        n_rows = int(rng.integers(2, 65))
        X = np.column_stack([
            rng.normal(size=n_rows),
            rng.integers(0, 5, size=n_rows).astype(float),
            rng.uniform(size=n_rows),
        ])
        Y = rng.normal(size=(n_rows, 2))
        params = GbtParams(n_estimators=1, max_depth=1, learning_rate=1.0, reg_lambda=1.0, min_child_weight=1, subsample=1.0)
        tree = fit(X, Y, params).trees[0]
        grad = Y.mean(axis=0) - Y

        best_gain, _, _ = _brute_force_split(X, grad, 1.0, 1)
        if best_gain <= 0.0:
            assert tree.n_nodes == 1
            return
        mask = X[:, tree.feature[0]] < tree.threshold[0]
        assert _gain(grad, mask, 1.0) >= best_gain - 1e-9 * max(1.0, best_gain)
        left_value = -grad[mask].sum(axis=0) / (mask.sum() + 1.0)
        np.testing.assert_allclose(tree.values[tree.left[0]], left_value, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("mcw", [1, 5])
    @pytest.mark.parametrize("seed", range(20))
    def test_full_tree_matches_exhaustive_search(self, seed, mcw):
        rng = np.random.default_rng(100 + seed)
        n_rows = int(rng.integers(2, 65))
        X = np.column_stack([
            rng.normal(size=n_rows),
            rng.integers(0, 5, size=n_rows).astype(float),
            rng.uniform(size=n_rows),
        ])
        Y = rng.normal(size=(n_rows, 2))
        params = GbtParams(
            n_estimators=1, learning_rate=1.0, reg_lambda=0.0, min_child_weight=mcw, subsample=1.0, colsample_bytree=1.0
        )
        model = fit(X, Y, params)
        assert model.trees[0].depth() <= params.max_depth

        base = Y.mean(axis=0)
        expected = np.empty_like(Y)
        _exact_tree_predictions(X, base - Y, np.arange(n_rows), 0, params.max_depth, 0.0, mcw, expected)
        np.testing.assert_allclose(predict(model, X), base + expected, rtol=0, atol=1e-12)

    def test_training_rmse_never_increases(self):
        X, Y = _random_regression()
        params = GbtParams(n_estimators=200, max_depth=3, subsample=1.0, colsample_bytree=1.0)
        history = [entry["train_rmse"] for entry in fit(X, Y, params).history]
        assert len(history) == 200
        assert all(later <= earlier + 1e-12 for earlier, later in zip(history, history[1:]))

    def test_validation_history(self):
        X, Y = _random_regression(seed=1)
        model = fit(X[:150], Y[:150], GbtParams(n_estimators=5, max_depth=2), eval_set=(X[150:], Y[150:]))
        assert [entry["round"] for entry in model.history] == [1, 2, 3, 4, 5]
        assert all("val_rmse" in entry for entry in model.history)

    def test_deterministic_for_a_seed(self):
        X, Y = _random_regression(seed=2)
        params = GbtParams(n_estimators=15, max_depth=4, subsample=0.8, colsample_bytree=0.7, seed=42)
        first = json.dumps(serialize(fit(X, Y, params)))
        second = json.dumps(serialize(fit(X, Y, params)))
        assert first == second

    def test_shift_equivariance(self):
        X, Y = _random_regression(n_rows=120, seed=3)
        params = GbtParams(n_estimators=20, max_depth=3, subsample=1.0)
        shifted = predict(fit(X, Y + 2.5, params), X)
        np.testing.assert_allclose(shifted, predict(fit(X, Y, params), X) + 2.5, rtol=0, atol=1e-9)

    def test_depth_limit(self):
        X, Y = _random_regression(seed=4)
        model = fit(X, Y, GbtParams(n_estimators=5, max_depth=2))
        assert max(tree.depth() for tree in model.trees) <= 2

    def test_one_output_per_tree(self):
        X, Y = _random_regression(n_rows=80, seed=5)
        model = fit(X, Y, GbtParams(n_estimators=4, max_depth=2, multi_strategy="one_output_per_tree"))
        assert len(model.trees) == 8
        assert [tree.output_slice for tree in model.trees[:2]] == [(0,), (1,)]

    def test_input_errors(self):
        with pytest.raises(DimensionMismatch):
            fit(np.zeros((4, 2)), np.zeros(3))
        with pytest.raises(EmptyDataset):
            fit(np.zeros((1, 2)), np.zeros(1))
        with pytest.raises(SchemaError):
            fit(np.zeros((3, 2)), np.array([0.0, np.nan, 1.0]))

    def test_param_validation(self):
        with pytest.raises(BadConfig):
            GbtParams(n_estimators=0)
        with pytest.raises(BadConfig):
            GbtParams(subsample=0.0)
        with pytest.raises(BadConfig, match="forest"):
            GbtParams(multi_strategy="forest")
        assert GbtParams.from_dict({"max_depth": 3, "unrelated": 1}).max_depth == 3


class TestPredict:

    def test_empty_ensemble_returns_base_score(self):
        model = GbtModel(np.array([0.3, -0.1]), [], GbtParams(), 3, 2)
        np.testing.assert_array_equal(predict(model, np.zeros(3)), [0.3, -0.1])

    def test_single_leaf_tree(self):
        leaf = RegressionTree([-1], [0.0], [-1], [-1], [[0.2, 0.4]], (0, 1))
        model = GbtModel(np.array([1.0, 0.0]), [leaf], GbtParams(learning_rate=0.5), 3, 2)
        np.testing.assert_allclose(predict(model, np.zeros(3)), [1.1, 0.2], rtol=0, atol=1e-15)

    def test_single_row_and_batch_agree_bitwise(self):
        X, Y = _random_regression(seed=6)
        model = fit(X, Y, GbtParams(n_estimators=25, max_depth=4))
        batch = predict(model, X[:40])
        rows = np.array([predict(model, x) for x in X[:40]])
        np.testing.assert_array_equal(rows, batch)

    def test_dimension_mismatch(self):
        model = GbtModel(np.zeros(2), [], GbtParams(), 3, 2)
        with pytest.raises(DimensionMismatch):
            predict(model, np.zeros(4))
        with pytest.raises(DimensionMismatch):
            predict(model, np.zeros((5, 2)))


ONE_SPLIT = {
    "version": 1,
    "feature_dim": 2,
    "output_dim": 2,
    "base_score": [1.0, 0.0],
    "learning_rate": 0.5,
    "multi_strategy": "multi_output_tree",
    "params": {},
    "trees": [
        {
            "nodes": [
                {"kind": "split", "feature": 1, "threshold": 0.3, "left": 1, "right": 2, "missing_goes_left": True},
                {"kind": "leaf", "values": [-0.2, 0.4]},
                {"kind": "leaf", "values": [0.1, -0.6]},
            ]
        }
    ],
}


class TestModelDocument:

    def test_hand_written_document(self):
        model = deserialize(ONE_SPLIT)
        assert predict(model, [7.0, 0.1]).tolist() == pytest.approx([0.9, 0.2])
        assert predict(model, [7.0, 0.3]).tolist() == pytest.approx([1.05, -0.3])
        assert predict(model, [7.0, np.nan]).tolist() == pytest.approx([0.9, 0.2])
        batch = predict(model, np.array([[0.0, 0.1], [0.0, 0.5], [0.0, np.nan]]))
        np.testing.assert_allclose(batch, [[0.9, 0.2], [1.05, -0.3], [0.9, 0.2]], atol=1e-15)

    def test_round_trip_is_bit_exact(self, tmp_path):
        X, Y = _random_regression(seed=7)
        model = fit(X, Y, GbtParams(n_estimators=20, max_depth=5, subsample=0.9, seed=3))
        restored = load_model(save_model(model, tmp_path / "model.json"))
        unseen = np.random.default_rng(8).normal(size=(50, 4))
        np.testing.assert_array_equal(predict(restored, unseen), predict(model, unseen))
        np.testing.assert_array_equal(predict(restored, unseen[0]), predict(model, unseen[0]))
        assert json.dumps(serialize(restored)) == json.dumps(serialize(model))

    def test_round_trip_one_output_per_tree(self):
        X, Y = _random_regression(n_rows=60, seed=9)
        model = fit(X, Y, GbtParams(n_estimators=3, max_depth=2, multi_strategy=MultiStrategy.ONE_OUTPUT_PER_TREE))
        restored = deserialize(json.loads(json.dumps(serialize(model))))
        np.testing.assert_array_equal(predict(restored, X), predict(model, X))

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text(json.dumps(ONE_SPLIT)[:80], encoding="utf-8")
        with pytest.raises(SchemaError):
            load_model(path)

    @pytest.mark.parametrize("missing", ["trees", "base_score", "feature_dim"])
    def test_missing_section(self, missing):
        document = {key: value for key, value in ONE_SPLIT.items() if key != missing}
        with pytest.raises(SchemaError):
            deserialize(document)

    def test_version(self):
        with pytest.raises(SchemaError):
            deserialize({key: value for key, value in ONE_SPLIT.items() if key != "version"})
        with pytest.raises(VersionMismatch):
            deserialize({**ONE_SPLIT, "version": 2})

    def test_bad_tree_structure(self):
        bad_child = json.loads(json.dumps(ONE_SPLIT))
        bad_child["trees"][0]["nodes"][0]["left"] = 7
        with pytest.raises(SchemaError):
            deserialize(bad_child)

        bad_feature = json.loads(json.dumps(ONE_SPLIT))
        bad_feature["trees"][0]["nodes"][0]["feature"] = 5
        with pytest.raises(SchemaError):
            deserialize(bad_feature)

        bad_leaf = json.loads(json.dumps(ONE_SPLIT))
        bad_leaf["trees"][0]["nodes"][1]["values"] = [0.1]
        with pytest.raises(SchemaError):
            deserialize(bad_leaf)
