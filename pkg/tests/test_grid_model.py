"""
Grid validation, the power mismatch evaluator and the JSON file formats.
"""
import json

import numpy as np
import pytest

from datagen import GridGenConfig, ScenarioGenConfig, gen_grid, gen_scenario
from errors import (
    DanglingBranch,
    DimensionMismatch,
    InvalidImpedance,
    MultipleSlack,
    NoSlack,
    NotATree,
    SchemaError,
)
from grid_model import (
    Branch,
    Bus,
    BusKind,
    GridDataset,
    LabeledSample,
    RadialGrid,
    Scenario,
    VoltageState,
    build_admittance,
    grid_hash,
    load_grid,
    load_grid_dataset,
    load_scenario,
    load_voltage_state,
    power_mismatch,
    read_dataset,
    save_grid,
    save_grid_dataset,
    save_scenario,
    save_voltage_state,
    validate_grid,
    write_dataset,
)


class TestValidateGrid:

    def test_two_bus_grid_is_valid(self, two_bus_grid):
        assert validate_grid(two_bus_grid) is two_bus_grid

    def test_triangle_is_not_a_tree(self, make_grid):
        with pytest.raises(NotATree):
            validate_grid(make_grid([(0, 1), (1, 2), (2, 0)]))

    def test_disconnected_grid_is_not_a_tree(self, make_grid):
        with pytest.raises(NotATree):
            validate_grid(make_grid([(0, 1), (2, 3)], n_buses=4))

    def test_parallel_branch_with_isolated_bus(self, make_grid):
        with pytest.raises(NotATree):
            validate_grid(make_grid([(0, 1), (1, 2), (1, 2)], n_buses=4))

    def test_no_slack(self):
        grid = RadialGrid(buses=(Bus(0), Bus(1)), branches=(Branch(0, 1, 0.01, 0.01),), slack_id=0)
        with pytest.raises(NoSlack):
            validate_grid(grid)

    def test_multiple_slack(self):
        grid = RadialGrid(
            buses=(Bus(0, BusKind.SLACK), Bus(1, BusKind.SLACK)),
            branches=(Branch(0, 1, 0.01, 0.01),),
            slack_id=0,
        )
        with pytest.raises(MultipleSlack):
            validate_grid(grid)

    def test_dangling_branch(self, make_grid):
        with pytest.raises(DanglingBranch):
            validate_grid(make_grid([(0, 5)], n_buses=2))

    @pytest.mark.parametrize("r,x", [(0.0, 0.0), (-0.01, 0.01), (0.01, -0.02)])
    def test_invalid_impedance(self, make_grid, r, x):
        with pytest.raises(InvalidImpedance):
            validate_grid(make_grid([(0, 1, r, x)]))

    def test_sparse_bus_ids(self):
        grid = RadialGrid(buses=(Bus(0, BusKind.SLACK), Bus(2)), branches=(Branch(0, 2, 0.01, 0.01),), slack_id=0)
        with pytest.raises(NotATree):
            validate_grid(grid)

    def test_grid_errors_are_value_errors(self, make_grid):
        with pytest.raises(ValueError):
            validate_grid(make_grid([(0, 1), (1, 2), (2, 0)]))

    def test_generated_grid_keeps_tree_property(self):
        grid = validate_grid(gen_grid(GridGenConfig(n_buses=60, seed=2)))
        assert len(grid.branches) == grid.n_buses - 1


def _hand_mismatch(y: complex, p, q, vm, va_deg):
    """Eqs. of the injected power written out term by term for a 2-bus Y matrix"""
    Y = np.array([[y, -y], [-y, y]])
    G, B = Y.real, Y.imag
    theta = np.radians(va_deg)
    d_p, d_q = np.zeros(2), np.zeros(2)
    for i in range(2):
        p_calc = q_calc = 0.0
        for j in range(2):
            t = theta[i] - theta[j]
            p_calc += vm[i] * vm[j] * (G[i, j] * np.cos(t) + B[i, j] * np.sin(t))
            q_calc += vm[i] * vm[j] * (G[i, j] * np.sin(t) - B[i, j] * np.cos(t))
        d_p[i] = p[i] - p_calc
        d_q[i] = q[i] - q_calc
    return d_p, d_q


class TestPowerMismatch:

    def test_flat_zero_injection_is_balanced(self):
        grid = gen_grid(GridGenConfig(n_buses=40, seed=9))
        n = grid.n_buses
        d_p, d_q = power_mismatch(grid, Scenario(np.zeros(n), np.zeros(n)), VoltageState.flat(n))
        assert np.max(np.abs(d_p)) < 1e-12
        assert np.max(np.abs(d_q)) < 1e-12

    def test_two_bus_matches_hand_evaluation(self, two_bus_grid, two_bus_load):
        state = VoltageState(vm=[1.0, 0.985], va=[0.0, -0.4])
        d_p, d_q = power_mismatch(two_bus_grid, two_bus_load, state)
        expected_p, expected_q = _hand_mismatch(
            1.0 / complex(0.01, 0.01), two_bus_load.p_inj, two_bus_load.q_inj, state.vm, state.va
        )
        np.testing.assert_allclose(d_p, expected_p, rtol=0, atol=1e-10)
        np.testing.assert_allclose(d_q, expected_q, rtol=0, atol=1e-10)

    def test_dimension_mismatch(self, two_bus_grid):
        with pytest.raises(DimensionMismatch):
            power_mismatch(two_bus_grid, Scenario(np.zeros(3), np.zeros(3)), VoltageState.flat(2))

    def test_invariant_under_relabeling(self, relabel):
        grid = gen_grid(GridGenConfig(n_buses=12, seed=4))
        scenario = gen_scenario(grid, ScenarioGenConfig(seed=1), 0)
        rng = np.random.default_rng(0)
        state = VoltageState(1.0 - 0.02 * rng.random(12), -rng.random(12))

        perm = rng.permutation(12)
        relabeled = relabel(grid, perm)
        inverse = np.argsort(perm)
        moved_scenario = Scenario(scenario.p_inj[inverse], scenario.q_inj[inverse])
        moved_state = VoltageState(state.vm[inverse], state.va[inverse])

        d_p, d_q = power_mismatch(grid, scenario, state)
        moved_p, moved_q = power_mismatch(validate_grid(relabeled), moved_scenario, moved_state)
        np.testing.assert_allclose(moved_p[perm], d_p, rtol=0, atol=1e-12)
        np.testing.assert_allclose(moved_q[perm], d_q, rtol=0, atol=1e-12)

    def test_admittance_rows_sum_to_zero(self):
        grid = gen_grid(GridGenConfig(n_buses=25, seed=1))
        Y = build_admittance(grid).toarray()
        assert Y.shape == (25, 25)
        assert np.max(np.abs(Y.sum(axis=1))) < 1e-9


class TestTypes:

    def test_scenario_arrays_are_read_only(self):
        scenario = Scenario([0.0, -0.1], [0.0, -0.02])
        with pytest.raises(ValueError):
            scenario.p_inj[0] = 1.0

    def test_scenario_length_mismatch(self):
        with pytest.raises(DimensionMismatch):
            Scenario([0.0, -0.1], [0.0])

    def test_slack_voltage_must_be_positive(self):
        with pytest.raises(SchemaError):
            Scenario([0.0], [0.0], slack_vm=0.0)

    def test_scaled(self):
        scenario = Scenario([0.0, -0.1], [0.0, -0.02], slack_vm=1.02, slack_va=3.0)
        half = scenario.scaled(0.5)
        np.testing.assert_array_equal(half.p_inj, [0.0, -0.05])
        assert half.slack_vm == 1.02 and half.slack_va == 3.0

    def test_complex_voltage(self):
        state = VoltageState([1.0, 0.5], [0.0, 90.0])
        np.testing.assert_allclose(state.complex_voltage(), [1.0, 0.5j], atol=1e-15)

    def test_subset(self, two_bus_grid):
        samples = tuple(
            LabeledSample(Scenario([0.0, -0.01 * k], [0.0, 0.0]), VoltageState.flat(2)) for k in range(5)
        )
        dataset = GridDataset(two_bus_grid, samples, "toy")
        part = dataset.subset([4, 1])
        assert part.name == "toy"
        assert part.samples == (samples[4], samples[1])


class TestFiles:

    def test_grid_round_trip(self, tmp_path):
        grid = gen_grid(GridGenConfig(n_buses=15, seed=8))
        path = save_grid(grid, tmp_path / "grid.json")
        assert load_grid(path) == grid
        with open(path, encoding="utf-8") as f:
            document = json.load(f)
        assert set(document["branches"][0]) == {"from", "to", "r_pu", "x_pu"}
        assert document["buses"][0] == {"id": 0, "kind": "slack"}

    def test_loaded_grid_is_validated(self, tmp_path, make_grid):
        path = save_grid(make_grid([(0, 1), (1, 2), (2, 0)]), tmp_path / "cycle.json")
        with pytest.raises(NotATree):
            load_grid(path)

    def test_grid_document_missing_key(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"buses": [], "slack_id": 0}), encoding="utf-8")
        with pytest.raises(SchemaError):
            load_grid(path)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{"buses": [', encoding="utf-8")
        with pytest.raises(SchemaError):
            load_grid(path)

    def test_scenario_and_state_round_trip(self, tmp_path):
        scenario = Scenario([0.0, -0.1, 0.03], [0.0, -0.05, 0.0], slack_vm=1.01, slack_va=-2.0)
        loaded = load_scenario(save_scenario(scenario, tmp_path / "scenario.json"))
        np.testing.assert_array_equal(loaded.p_inj, scenario.p_inj)
        assert (loaded.slack_vm, loaded.slack_va) == (1.01, -2.0)

        state = VoltageState([1.0, 0.99, 0.9812345678901234], [0.0, -0.1, -0.25])
        loaded_state = load_voltage_state(save_voltage_state(state, tmp_path / "state.json"))
        np.testing.assert_array_equal(loaded_state.vm, state.vm)
        np.testing.assert_array_equal(loaded_state.va, state.va)

    def test_dataset_round_trip(self, tmp_path, small_dataset):
        path = write_dataset(tmp_path / "dataset.jsonl", small_dataset.samples)
        samples = read_dataset(path)
        assert len(samples) == len(small_dataset.samples)
        for original, loaded in zip(small_dataset.samples, samples):
            np.testing.assert_array_equal(loaded.scenario.p_inj, original.scenario.p_inj)
            np.testing.assert_array_equal(loaded.truth.vm, original.truth.vm)
            np.testing.assert_array_equal(loaded.truth.va, original.truth.va)

    def test_bad_dataset_record(self, tmp_path):
        path = tmp_path / "dataset.jsonl"
        path.write_text('{"truth": {}}\n', encoding="utf-8")
        with pytest.raises(SchemaError, match=":1:"):
            read_dataset(path)

    def test_grid_dataset_directory(self, tmp_path, small_dataset):
        directory = tmp_path / "grid_00_n20"
        paths = save_grid_dataset(small_dataset, directory)
        assert [p.name for p in paths] == ["grid.json", "dataset.jsonl"]
        loaded = load_grid_dataset(directory)
        assert loaded.name == "grid_00_n20"
        assert loaded.grid == small_dataset.grid
        assert len(loaded.samples) == 30

    def test_grid_dataset_size_mismatch(self, tmp_path, two_bus_grid):
        sample = LabeledSample(Scenario(np.zeros(3), np.zeros(3)), VoltageState.flat(3))
        save_grid_dataset(GridDataset(two_bus_grid, (sample,)), tmp_path)
        with pytest.raises(DimensionMismatch):
            load_grid_dataset(tmp_path)


def test_grid_hash_is_content_based():
    grid = gen_grid(GridGenConfig(n_buses=10, seed=1))
    assert grid_hash(grid) == grid_hash(gen_grid(GridGenConfig(n_buses=10, seed=1)))
    assert grid_hash(grid) != grid_hash(gen_grid(GridGenConfig(n_buses=10, seed=2)))
