"""
Tree orientation, downstream aggregation, path decomposition and per-edge sample extraction.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np

from errors import DimensionMismatch, MissingTruth, SchemaError
from grid_model import RadialGrid, Scenario, VoltageState, grid_hash, to_graph
from variants import Variant, make_target

logger = logging.getLogger(__name__)

FEATURE_ORDER: Tuple[str, ...] = (
    "v_parent_pu",
    "theta_parent_deg",
    "r_pu",
    "x_pu",
    "p_inj_pu",
    "q_inj_pu",
    "p_agg_pu",
    "q_agg_pu",
    "v_ldf_pu",
    "theta_ldf_deg",
)
N_FEATURES = len(FEATURE_ORDER)


@dataclass(frozen=True, eq=False)
class Orientation:
    """
    BFS orientation away from the slack bus.

    branch_r / branch_x hold the impedance of the branch to each bus's parent
    (zero at the slack).
    """
    slack_id: int
    parent: Tuple[Optional[int], ...]
    depth: np.ndarray
    bfs_order: Tuple[int, ...]
    children: Tuple[Tuple[int, ...], ...]
    branch_r: np.ndarray
    branch_x: np.ndarray

    @property
    def n_buses(self) -> int:
        return len(self.parent)

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())

    def parent_array(self) -> np.ndarray:
        """Parent ids with -1 at the slack"""
        return np.array([-1 if p is None else p for p in self.parent], dtype=int)

    def edges(self) -> List[Tuple[int, int]]:
        return [(self.parent[j], j) for j in self.bfs_order[1:]]

    def levels(self) -> List[List[int]]:
        """Non-slack buses grouped by depth, each level in BFS order"""
        levels: List[List[int]] = [[] for _ in range(self.max_depth)]
        for bus in self.bfs_order[1:]:
            levels[int(self.depth[bus]) - 1].append(bus)
        return levels


@dataclass(frozen=True, eq=False)
class Aggregates:
    p_agg: np.ndarray
    q_agg: np.ndarray


@dataclass(frozen=True, eq=False)
class EdgeSample:
    child_id: int
    parent_id: int
    features: np.ndarray
    target: np.ndarray


def orient(grid: RadialGrid) -> Orientation:
    """Deterministic BFS from the slack, siblings visited in ascending bus id"""
    graph = to_graph(grid)
    n_buses = grid.n_buses
    parent: List[Optional[int]] = [None] * n_buses
    depth = np.zeros(n_buses, dtype=int)
    children: List[List[int]] = [[] for _ in range(n_buses)]
    branch_r = np.zeros(n_buses)
    branch_x = np.zeros(n_buses)
    bfs_order = [grid.slack_id]

    for u, v in nx.bfs_edges(graph, grid.slack_id, sort_neighbors=sorted):
        parent[v] = u
        depth[v] = depth[u] + 1
        children[u].append(v)
        branch_r[v] = graph.edges[u, v]["r"]
        branch_x[v] = graph.edges[u, v]["x"]
        bfs_order.append(v)

    depth.setflags(write=False)
    branch_r.setflags(write=False)
    branch_x.setflags(write=False)
    return Orientation(
        slack_id=grid.slack_id,
        parent=tuple(parent),
        depth=depth,
        bfs_order=tuple(bfs_order),
        children=tuple(tuple(c) for c in children),
        branch_r=branch_r,
        branch_x=branch_x,
    )


def aggregate_downstream(grid: RadialGrid, orientation: Orientation, scenario: Scenario) -> Aggregates:
    """
    P_agg,j = -P_j + sum of P_agg over the children of j (Q alike), lossless.

    One reverse-BFS pass; a child is always folded into its parent after its
    own subtree is complete.
    """
    if scenario.n_buses != grid.n_buses:
        raise DimensionMismatch(f"Scenario has {scenario.n_buses} buses, grid has {grid.n_buses}")
    p_agg = -np.array(scenario.p_inj, dtype=float)
    q_agg = -np.array(scenario.q_inj, dtype=float)
    for bus in reversed(orientation.bfs_order[1:]):
        parent = orientation.parent[bus]
        p_agg[parent] += p_agg[bus]
        q_agg[parent] += q_agg[bus]
    return Aggregates(p_agg=p_agg, q_agg=q_agg)


def decompose_paths(grid: RadialGrid, orientation: Orientation) -> List[List[int]]:
    """One slack-to-leaf bus sequence per leaf, sorted by leaf id"""
    leaves = sorted(
        bus for bus in range(grid.n_buses) if not orientation.children[bus] and bus != orientation.slack_id
    )
    paths = []
    for leaf in leaves:
        path = [leaf]
        while orientation.parent[path[-1]] is not None:
            path.append(orientation.parent[path[-1]])
        paths.append(path[::-1])
    return paths


def edge_feature_matrix(
    orientation: Orientation,
    scenario: Scenario,
    parent_state: VoltageState,
    aggregates: Aggregates,
    ldf_baseline: VoltageState,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Feature rows for every non-slack bus, in BFS order.

    Returns (child_ids, features) with features ordered as FEATURE_ORDER. The
    parent voltage columns read parent_state at each bus's parent.
    """
    child_ids = np.array(orientation.bfs_order[1:], dtype=int)
    parent_ids = orientation.parent_array()[child_ids]
    features = np.column_stack(
        [
            parent_state.vm[parent_ids],
            parent_state.va[parent_ids],
            orientation.branch_r[child_ids],
            orientation.branch_x[child_ids],
            scenario.p_inj[child_ids],
            scenario.q_inj[child_ids],
            aggregates.p_agg[child_ids],
            aggregates.q_agg[child_ids],
            ldf_baseline.vm[child_ids],
            ldf_baseline.va[child_ids],
        ]
    )
    return child_ids, features


def edge_target_matrix(
    variant: Variant,
    orientation: Orientation,
    truth: VoltageState,
    ldf_baseline: VoltageState,
) -> np.ndarray:
    child_ids = np.array(orientation.bfs_order[1:], dtype=int)
    parent_ids = orientation.parent_array()[child_ids]
    return make_target(
        variant,
        np.column_stack([truth.vm[child_ids], truth.va[child_ids]]),
        np.column_stack([truth.vm[parent_ids], truth.va[parent_ids]]),
        np.column_stack([ldf_baseline.vm[child_ids], ldf_baseline.va[child_ids]]),
    )


def extract_edge_samples(
    grid: RadialGrid,
    orientation: Orientation,
    scenario: Scenario,
    truth: Optional[VoltageState],
    variant: Variant,
    aggregates: Aggregates,
    ldf_baseline: VoltageState,
) -> List[EdgeSample]:
    """
    Teacher-forced training rows: one EdgeSample per non-slack bus.

    The parent voltage features come from the ground truth, so ldf_baseline
    must have been computed from true parent states as well.
    """
    if truth is None:
        raise MissingTruth("Edge samples need a ground-truth voltage state")
    if truth.n_buses != grid.n_buses or not np.all(np.isfinite(truth.vm)) or not np.all(np.isfinite(truth.va)):
        raise MissingTruth(f"Ground truth must hold finite values for all {grid.n_buses} buses")

    child_ids, features = edge_feature_matrix(orientation, scenario, truth, aggregates, ldf_baseline)
    targets = edge_target_matrix(variant, orientation, truth, ldf_baseline)
    return [
        EdgeSample(
            child_id=int(child),
            parent_id=int(orientation.parent[child]),
            features=features[row],
            target=targets[row],
        )
        for row, child in enumerate(child_ids)
    ]


@dataclass(frozen=True, eq=False)
class EdgeBatch:
    """Columnar form of a list of EdgeSamples"""
    features: np.ndarray
    targets: np.ndarray
    grid_hash: str
    variant: Variant

    @classmethod
    def from_samples(cls, grid: RadialGrid, variant: Variant, samples: Sequence[EdgeSample]) -> "EdgeBatch":
        features = np.array([s.features for s in samples], dtype=float).reshape(-1, N_FEATURES)
        targets = np.array([s.target for s in samples], dtype=float).reshape(-1, 2)
        return cls(features=features, targets=targets, grid_hash=grid_hash(grid), variant=variant)

    def to_dict(self) -> dict:
        return {
            "features": self.features.tolist(),
            "targets": self.targets.tolist(),
            "meta": {"grid_hash": self.grid_hash, "variant": self.variant.value},
        }

    @classmethod
    def from_dict(cls, document: dict) -> "EdgeBatch":
        try:
            features = np.array(document["features"], dtype=float).reshape(-1, N_FEATURES)
            targets = np.array(document["targets"], dtype=float).reshape(-1, 2)
            meta = document["meta"]
            batch = cls(features, targets, str(meta["grid_hash"]), Variant.parse(meta["variant"]))
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"Invalid edge batch document: {type(e).__name__}: {e}") from e
        if batch.features.shape[0] != batch.targets.shape[0]:
            raise SchemaError("Edge batch has different feature and target row counts")
        return batch

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f)
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "EdgeBatch":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))
