"""
Radial network data model: buses, branches, injection scenarios and voltage states.

All quantities are per-unit; angles are degrees at the API and file boundary
and radians only inside trigonometric expressions. Loads are negative net
injections.
"""
import hashlib
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
import scipy.sparse as sp

from errors import (
    BoostRpfError,
    DanglingBranch,
    DimensionMismatch,
    InvalidImpedance,
    MultipleSlack,
    NoSlack,
    NotATree,
    SchemaError,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class BusKind(str, Enum):
    SLACK = "slack"
    PQ = "pq"


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind = BusKind.PQ
    name: Optional[str] = None


@dataclass(frozen=True)
class Branch:
    """Series branch z = r + jx between two buses, per-unit"""
    from_bus: int
    to_bus: int
    r: float
    x: float


def _frozen_array(values, length: Optional[int] = None, label: str = "array") -> np.ndarray:
    array = np.array(values, dtype=float)
    if array.ndim != 1:
        raise DimensionMismatch(f"{label} must be one-dimensional, got shape {array.shape}")
    if length is not None and array.shape[0] != length:
        raise DimensionMismatch(f"{label} has length {array.shape[0]}, expected {length}")
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class RadialGrid:
    buses: Tuple[Bus, ...]
    branches: Tuple[Branch, ...]
    slack_id: int

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    def to_dict(self) -> dict:
        return {
            "slack_id": self.slack_id,
            "buses": [
                {"id": bus.id, "kind": bus.kind.value, **({"name": bus.name} if bus.name is not None else {})}
                for bus in self.buses
            ],
            "branches": [
                {"from": branch.from_bus, "to": branch.to_bus, "r_pu": branch.r, "x_pu": branch.x}
                for branch in self.branches
            ],
        }

    @classmethod
    def from_dict(cls, document: dict) -> "RadialGrid":
        try:
            buses = [
                Bus(id=int(bus["id"]), kind=BusKind(str(bus["kind"]).lower()), name=bus.get("name"))
                for bus in document["buses"]
            ]
            branches = [
                Branch(
                    from_bus=int(branch["from"]),
                    to_bus=int(branch["to"]),
                    r=float(branch["r_pu"]),
                    x=float(branch["x_pu"]),
                )
                for branch in document["branches"]
            ]
            slack_id = int(document["slack_id"])
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"Invalid grid document: {type(e).__name__}: {e}") from e
        return cls(buses=tuple(buses), branches=tuple(branches), slack_id=slack_id)


@dataclass(frozen=True, eq=False)
class Scenario:
    """Net injections per bus (loads negative) plus the slack voltage"""
    p_inj: np.ndarray
    q_inj: np.ndarray
    slack_vm: float = 1.0
    slack_va: float = 0.0

    def __post_init__(self):
        p_inj = _frozen_array(self.p_inj, label="p_inj")
        q_inj = _frozen_array(self.q_inj, length=p_inj.shape[0], label="q_inj")
        object.__setattr__(self, "p_inj", p_inj)
        object.__setattr__(self, "q_inj", q_inj)
        object.__setattr__(self, "slack_vm", float(self.slack_vm))
        object.__setattr__(self, "slack_va", float(self.slack_va))
        if not self.slack_vm > 0:
            raise SchemaError(f"slack_vm must be positive, got {self.slack_vm}")

    @property
    def n_buses(self) -> int:
        return self.p_inj.shape[0]

    def scaled(self, alpha: float) -> "Scenario":
        return Scenario(alpha * self.p_inj, alpha * self.q_inj, self.slack_vm, self.slack_va)

    def to_dict(self) -> dict:
        return {
            "p_inj_pu": self.p_inj.tolist(),
            "q_inj_pu": self.q_inj.tolist(),
            "slack_vm_pu": self.slack_vm,
            "slack_va_deg": self.slack_va,
        }

    @classmethod
    def from_dict(cls, document: dict) -> "Scenario":
        try:
            return cls(
                p_inj=document["p_inj_pu"],
                q_inj=document["q_inj_pu"],
                slack_vm=document["slack_vm_pu"],
                slack_va=document["slack_va_deg"],
            )
        except BoostRpfError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"Invalid scenario document: {type(e).__name__}: {e}") from e


@dataclass(frozen=True, eq=False)
class VoltageState:
    vm: np.ndarray
    va: np.ndarray

    def __post_init__(self):
        vm = _frozen_array(self.vm, label="vm")
        va = _frozen_array(self.va, length=vm.shape[0], label="va")
        object.__setattr__(self, "vm", vm)
        object.__setattr__(self, "va", va)

    @property
    def n_buses(self) -> int:
        return self.vm.shape[0]

    @classmethod
    def flat(cls, n_buses: int, vm: float = 1.0, va: float = 0.0) -> "VoltageState":
        return cls(np.full(n_buses, vm), np.full(n_buses, va))

    def complex_voltage(self) -> np.ndarray:
        return self.vm * np.exp(1j * np.radians(self.va))

    def to_dict(self) -> dict:
        return {"vm_pu": self.vm.tolist(), "va_deg": self.va.tolist()}

    @classmethod
    def from_dict(cls, document: dict) -> "VoltageState":
        try:
            return cls(vm=document["vm_pu"], va=document["va_deg"])
        except BoostRpfError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"Invalid voltage document: {type(e).__name__}: {e}") from e


@dataclass(frozen=True)
class LabeledSample:
    scenario: Scenario
    truth: VoltageState


@dataclass(frozen=True)
class GridDataset:
    """One grid with its labeled scenarios"""
    grid: RadialGrid
    samples: Tuple[LabeledSample, ...] = field(default_factory=tuple)
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))

    def subset(self, indices: Iterable[int]) -> "GridDataset":
        return GridDataset(self.grid, tuple(self.samples[i] for i in indices), self.name)


def validate_grid(grid: RadialGrid) -> RadialGrid:
    """
    Returns the grid unchanged if it is a connected tree with exactly one slack bus.

    Raises NoSlack / MultipleSlack, DanglingBranch, InvalidImpedance or NotATree.
    """
    n_buses = grid.n_buses
    ids = sorted(bus.id for bus in grid.buses)
    if ids != list(range(n_buses)):
        raise NotATree(f"Bus ids must be unique and dense in [0, {n_buses}), got {ids[:10]}...")

    slack_buses = [bus.id for bus in grid.buses if bus.kind == BusKind.SLACK]
    if not slack_buses:
        raise NoSlack("Grid has no slack bus")
    if len(slack_buses) > 1:
        raise MultipleSlack(f"Grid has {len(slack_buses)} slack buses: {slack_buses}")
    if slack_buses[0] != grid.slack_id:
        raise NoSlack(f"slack_id {grid.slack_id} does not refer to the slack bus {slack_buses[0]}")

    for branch in grid.branches:
        if not (0 <= branch.from_bus < n_buses and 0 <= branch.to_bus < n_buses):
            raise DanglingBranch(f"Branch {branch.from_bus}->{branch.to_bus} refers to a missing bus")
        if branch.from_bus == branch.to_bus:
            raise DanglingBranch(f"Branch {branch.from_bus}->{branch.to_bus} is a self loop")
        if branch.r < 0 or branch.x < 0 or (branch.r == 0 and branch.x == 0):
            raise InvalidImpedance(
                f"Branch {branch.from_bus}->{branch.to_bus} has invalid impedance r={branch.r}, x={branch.x}"
            )

    if len(grid.branches) != n_buses - 1:
        raise NotATree(f"A radial grid with {n_buses} buses needs {n_buses - 1} branches, got {len(grid.branches)}")

    graph = to_graph(grid)
    if graph.number_of_edges() != len(grid.branches) or not nx.is_tree(graph):
        raise NotATree("Branch graph is not a connected tree (cycle, parallel branch or disconnected part)")

    return grid


def to_graph(grid: RadialGrid) -> nx.Graph:
    graph = nx.Graph()
    graph.add_nodes_from(bus.id for bus in grid.buses)
    for branch in grid.branches:
        graph.add_edge(branch.from_bus, branch.to_bus, r=branch.r, x=branch.x)
    return graph


def build_admittance(grid: RadialGrid) -> sp.csr_matrix:
    """Bus admittance matrix of the series branches (no shunts, no taps)"""
    n_buses = grid.n_buses
    f = np.array([branch.from_bus for branch in grid.branches], dtype=int)
    t = np.array([branch.to_bus for branch in grid.branches], dtype=int)
    y = 1.0 / np.array([complex(branch.r, branch.x) for branch in grid.branches])

    rows = np.concatenate([f, t, f, t])
    cols = np.concatenate([f, t, t, f])
    data = np.concatenate([y, y, -y, -y])
    return sp.csr_matrix((data, (rows, cols)), shape=(n_buses, n_buses))


def power_mismatch(grid: RadialGrid, scenario: Scenario, state: VoltageState) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-bus (dP, dQ) = specified injection minus the power the voltages draw from the network.

    S_calc_i = V_i * conj(sum_j Y_ij V_j) is the complex form of the two
    power injection equations.
    """
    n_buses = grid.n_buses
    if scenario.n_buses != n_buses or state.n_buses != n_buses:
        raise DimensionMismatch(
            f"Grid has {n_buses} buses, scenario {scenario.n_buses}, state {state.n_buses}"
        )
    voltage = state.complex_voltage()
    s_calc = voltage * np.conj(build_admittance(grid) @ voltage)
    return scenario.p_inj - s_calc.real, scenario.q_inj - s_calc.imag


def grid_hash(grid: RadialGrid) -> str:
    canonical = json.dumps(grid.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _write_json(path: PathLike, document: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2)
        f.write("\n")
    return path


def _read_json(path: PathLike) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path} is not valid JSON: {e}") from e


def load_grid(path: PathLike) -> RadialGrid:
    grid = validate_grid(RadialGrid.from_dict(_read_json(path)))
    logger.info(f"Loaded grid with {grid.n_buses} buses from {path}")
    return grid


def save_grid(grid: RadialGrid, path: PathLike) -> Path:
    return _write_json(path, grid.to_dict())


def load_scenario(path: PathLike) -> Scenario:
    return Scenario.from_dict(_read_json(path))


def save_scenario(scenario: Scenario, path: PathLike) -> Path:
    return _write_json(path, scenario.to_dict())


def load_voltage_state(path: PathLike) -> VoltageState:
    return VoltageState.from_dict(_read_json(path))


def save_voltage_state(state: VoltageState, path: PathLike) -> Path:
    return _write_json(path, state.to_dict())


def write_dataset(path: PathLike, samples: Sequence[LabeledSample]) -> Path:
    """JSON lines, one {"scenario", "truth"} record per sample"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for sample in samples:
            record = {"scenario": sample.scenario.to_dict(), "truth": sample.truth.to_dict()}
            f.write(json.dumps(record, separators=(",", ":")))
            f.write("\n")
    logger.info(f"Wrote {len(samples)} samples to {path}")
    return path


def read_dataset(path: PathLike) -> List[LabeledSample]:
    samples: List[LabeledSample] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record: Dict = json.loads(line)
                samples.append(
                    LabeledSample(
                        scenario=Scenario.from_dict(record["scenario"]),
                        truth=VoltageState.from_dict(record["truth"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise SchemaError(f"{path}:{line_no}: invalid dataset record: {e}") from e
    return samples


GRID_FILE = "grid.json"
DATASET_FILE = "dataset.jsonl"


def save_grid_dataset(dataset: GridDataset, directory: PathLike) -> List[Path]:
    """Writes grid.json and dataset.jsonl into directory"""
    directory = Path(directory)
    return [save_grid(dataset.grid, directory / GRID_FILE), write_dataset(directory / DATASET_FILE, dataset.samples)]


def load_grid_dataset(directory: PathLike) -> GridDataset:
    directory = Path(directory)
    grid = load_grid(directory / GRID_FILE)
    samples = read_dataset(directory / DATASET_FILE)
    for index, sample in enumerate(samples):
        if sample.scenario.n_buses != grid.n_buses or sample.truth.n_buses != grid.n_buses:
            raise DimensionMismatch(f"{directory}: sample {index} does not match the {grid.n_buses}-bus grid")
    return GridDataset(grid=grid, samples=tuple(samples), name=directory.name)
