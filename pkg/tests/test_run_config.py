"""Run configuration files, flag overrides, seeds and data splits."""
import json

import pytest

from analytical import SolverOptions
from datagen import REFERENCE_GRID_SIZES
from errors import BadConfig
from gbt import GbtParams, MultiStrategy
from run_config import RunConfig, derive_seeds, load_run_config, split_indices


class TestRunConfig:

    def test_defaults(self):
        run_config = RunConfig()
        assert run_config.variant == "parent"
        assert run_config.gbt == GbtParams()
        assert run_config.bench_sizes == list(REFERENCE_GRID_SIZES)
        assert run_config.split_fractions == pytest.approx((4 / 6, 1 / 6, 1 / 6))

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"split": (1.0, 1.0)},
            {"split": (1.0, -1.0, 1.0)},
            {"split": (0.0, 0.0, 0.0)},
            {"split_mode": "bus"},
            {"variant": "residual"},
            {"ldf_anchor": "child"},
            {"preset": "oberrhein"},
            {"n_samples": -5},
            {"gbt": {"n_estimators": 0}},
            {"solver": {"max_iter": 0}},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(BadConfig):
            RunConfig(**kwargs)

    def test_variant_aliases_are_normalized(self):
        assert RunConfig(variant="xgb-ldf").variant == "ldf"

    def test_unknown_keys(self):
        with pytest.raises(BadConfig, match="learning_rate"):
            RunConfig.from_dict({"learning_rate": 0.1})

    def test_manifest_document(self):
        manifest = {"command": "train", "seed": 3, "config": {"seed": 3, "variant": "absolute"}, "inputs": {}}
        run_config = RunConfig.from_dict(manifest)
        assert run_config.seed == 3
        assert run_config.variant == "absolute"

    def test_overrides(self):
        base = RunConfig(seed=1, n_samples=50)
        run_config = base.with_overrides(
            {"seed": 7, "n_samples": None, "gbt_max_depth": 4, "gbt_multi_strategy": "one_output_per_tree", "solver_tol": 1e-6}
        )
        assert run_config.seed == 7
        assert run_config.n_samples == 50
        assert run_config.gbt.max_depth == 4
        assert run_config.gbt.multi_strategy == MultiStrategy.ONE_OUTPUT_PER_TREE
        assert run_config.gbt.n_estimators == GbtParams().n_estimators
        assert run_config.solver == SolverOptions(tol=1e-6)
        assert base.seed == 1

    def test_dict_round_trip(self):
        run_config = RunConfig(seed=4, datasets=["a", "b"], split=(3, 1, 1), gbt=GbtParams(max_depth=3))
        document = json.loads(json.dumps(run_config.to_dict()))
        assert RunConfig.from_dict(document) == run_config

    def test_load_yaml_and_json(self, tmp_path):
        yaml_path = tmp_path / "run.yml"
        yaml_path.write_text("seed: 9\ngbt:\n  max_depth: 5\nsplit: [8, 1, 1]\n", encoding="utf-8")
        run_config = load_run_config(yaml_path)
        assert run_config.seed == 9
        assert run_config.gbt.max_depth == 5
        assert run_config.split_fractions == pytest.approx((0.8, 0.1, 0.1))

        json_path = tmp_path / "run.json"
        json_path.write_text(json.dumps({"method": "ac", "solver": {"tol": 1e-8}}), encoding="utf-8")
        assert load_run_config(json_path).solver.tol == 1e-8
        assert load_run_config(None) == RunConfig()

    def test_load_errors(self, tmp_path):
        broken = tmp_path / "broken.yml"
        broken.write_text("seed: [1\n", encoding="utf-8")
        with pytest.raises(BadConfig):
            load_run_config(broken)
        listing = tmp_path / "list.yml"
        listing.write_text("- 1\n- 2\n", encoding="utf-8")
        with pytest.raises(BadConfig):
            load_run_config(listing)


def test_derive_seeds():
    seeds = derive_seeds(42, 4)
    assert seeds == derive_seeds(42, 4)
    assert len(set(seeds)) == 4
    assert seeds != derive_seeds(43, 4)


class TestSplitIndices:

    def test_sizes_and_disjointness(self):
        parts = split_indices(1800, RunConfig().split_fractions, seed=0)
        assert [len(parts[k]) for k in ("train", "val", "test")] == [1200, 300, 300]
        assert sorted(parts["train"] + parts["val"] + parts["test"]) == list(range(1800))

    def test_deterministic(self):
        assert split_indices(100, (0.8, 0.1, 0.1), 5) == split_indices(100, (0.8, 0.1, 0.1), 5)
        assert split_indices(100, (0.8, 0.1, 0.1), 5) != split_indices(100, (0.8, 0.1, 0.1), 6)

    def test_rounding_leaves_the_rest_to_test(self):
        parts = split_indices(7, (0.5, 0.5, 0.0), 1)
        assert sum(len(v) for v in parts.values()) == 7
        assert len(parts["train"]) == 4
