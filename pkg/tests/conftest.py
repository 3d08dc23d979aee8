"""Shared grid, scenario and dataset fixtures."""
import numpy as np
import pytest

from datagen import GridGenConfig, ScenarioGenConfig, build_dataset, gen_grid
from gbt import GbtParams
from grid_model import Branch, Bus, BusKind, RadialGrid, Scenario
from sequential_model import train
from variants import Variant


def _make_grid(edges, n_buses=None, slack_id=0, r=0.01, x=0.01) -> RadialGrid:
    """
    Unvalidated grid from (from, to) or (from, to, r, x) tuples.

    n_buses defaults to the highest bus id plus one.
    """
    branches = []
    for edge in edges:
        if len(edge) == 2:
            branches.append(Branch(edge[0], edge[1], r, x))
        else:
            branches.append(Branch(*edge))
    if n_buses is None:
        n_buses = 1 + max(max(b.from_bus, b.to_bus) for b in branches)
    buses = tuple(Bus(i, BusKind.SLACK if i == slack_id else BusKind.PQ) for i in range(n_buses))
    return RadialGrid(buses=buses, branches=tuple(branches), slack_id=slack_id)


def _chain_grid(n_buses: int, r=0.01, x=0.01) -> RadialGrid:
    return _make_grid([(i, i + 1) for i in range(n_buses - 1)], r=r, x=x)


def _relabel(grid: RadialGrid, perm) -> RadialGrid:
    """Same network with bus i renamed to perm[i]"""
    buses = sorted((Bus(int(perm[b.id]), b.kind) for b in grid.buses), key=lambda b: b.id)
    branches = [Branch(int(perm[b.from_bus]), int(perm[b.to_bus]), b.r, b.x) for b in grid.branches]
    return RadialGrid(buses=tuple(buses), branches=tuple(branches), slack_id=int(perm[grid.slack_id]))


@pytest.fixture
def make_grid():
    return _make_grid


@pytest.fixture
def chain_grid():
    return _chain_grid


@pytest.fixture
def relabel():
    return _relabel


@pytest.fixture
def two_bus_grid() -> RadialGrid:
    return _make_grid([(0, 1)], r=0.01, x=0.01)


@pytest.fixture
def two_bus_load() -> Scenario:
    return Scenario(p_inj=[0.0, -0.1], q_inj=[0.0, -0.05])


@pytest.fixture
def star_grid() -> RadialGrid:
    # branches listed out of id order on purpose
    return _make_grid([(0, 3), (0, 1), (0, 4), (0, 2)])


@pytest.fixture(scope="session")
def grid_116() -> RadialGrid:
    return gen_grid(GridGenConfig(n_buses=116, seed=5))


@pytest.fixture(scope="session")
def small_dataset():
    grid = gen_grid(GridGenConfig(n_buses=20, seed=3))
    return build_dataset(grid, ScenarioGenConfig(seed=4), 30, name="small")


@pytest.fixture(scope="session")
def small_predictor(small_dataset):
    return train(small_dataset, Variant.PARENT_RESIDUAL, GbtParams(n_estimators=10, max_depth=3, seed=1))


def zero_scenario(n_buses: int, slack_vm: float = 1.0, slack_va: float = 0.0) -> Scenario:
    return Scenario(np.zeros(n_buses), np.zeros(n_buses), slack_vm, slack_va)


@pytest.fixture
def flat_scenario():
    return zero_scenario
