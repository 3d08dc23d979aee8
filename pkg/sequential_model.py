"""
The boosted voltage-drop predictor: teacher-forced training on edge samples and
autoregressive inference along the BFS orientation.

A predictor stores no topology. Every feature row describes one branch and
its parent state, so the same predictor runs on any radial grid.
"""
import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from analytical import ldf_voltage, lindistflow_solve, teacher_forced_ldf
from errors import BadConfig, DimensionMismatch, EmptyDataset, SchemaError
from gbt import GbtModel, GbtParams, deserialize, fit, predict, serialize
from grid_model import GridDataset, RadialGrid, Scenario, VoltageState
from path_engine import FEATURE_ORDER, N_FEATURES, Orientation, aggregate_downstream, extract_edge_samples, orient
from variants import Variant, reconstruct

logger = logging.getLogger(__name__)


class LdfAnchor(str, Enum):
    """Where the LinDistFlow feature columns start from"""
    PARENT = "parent"
    SLACK = "slack"


@dataclass(frozen=True, eq=False)
class TrainedPredictor:
    variant: Variant
    model: GbtModel
    ldf_anchor: LdfAnchor = LdfAnchor.PARENT

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        object.__setattr__(self, "ldf_anchor", LdfAnchor(self.ldf_anchor))
        if self.model.feature_dim != N_FEATURES or self.model.output_dim != 2:
            raise DimensionMismatch(
                f"A voltage predictor needs a ({N_FEATURES} -> 2) model, "
                f"got ({self.model.feature_dim} -> {self.model.output_dim})"
            )

    @property
    def feature_order(self) -> Tuple[str, ...]:
        return FEATURE_ORDER

    def predict_one(self, features) -> np.ndarray:
        return predict(self.model, features)

    def predict_batch(self, features: np.ndarray) -> np.ndarray:
        return predict(self.model, features)


def _baseline(
    grid: RadialGrid, orientation: Orientation, scenario: Scenario, truth: VoltageState, aggregates, anchor: LdfAnchor
) -> VoltageState:
    if anchor == LdfAnchor.SLACK:
        return lindistflow_solve(grid, orientation, scenario)
    return teacher_forced_ldf(orientation, truth, aggregates, scenario.slack_vm)


def build_training_matrix(
    datasets: Union[GridDataset, Sequence[GridDataset]],
    variant: Variant,
    anchor: LdfAnchor = LdfAnchor.PARENT,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Pooled teacher-forced rows of every scenario of every grid.

    Returns (X, Y) with X ordered as FEATURE_ORDER and Y holding the
    variant's (vm, va) targets. Each scenario contributes N - 1 rows.
    """
    if isinstance(datasets, GridDataset):
        datasets = [datasets]
    variant = Variant.parse(variant)
    anchor = LdfAnchor(anchor)

    feature_blocks: List[np.ndarray] = []
    target_blocks: List[np.ndarray] = []
    for dataset in datasets:
        orientation = orient(dataset.grid)
        for sample in dataset.samples:
            aggregates = aggregate_downstream(dataset.grid, orientation, sample.scenario)
            ldf = _baseline(dataset.grid, orientation, sample.scenario, sample.truth, aggregates, anchor)
            edges = extract_edge_samples(
                dataset.grid, orientation, sample.scenario, sample.truth, variant, aggregates, ldf
            )
            feature_blocks.append(np.array([edge.features for edge in edges]).reshape(-1, N_FEATURES))
            target_blocks.append(np.array([edge.target for edge in edges]).reshape(-1, 2))

    if not feature_blocks:
        raise EmptyDataset("No labeled scenarios to build training rows from")
    X = np.vstack(feature_blocks)
    Y = np.vstack(target_blocks)
    if X.shape[0] == 0:
        raise EmptyDataset("Datasets hold no branches")
    return X, Y


def train(
    datasets: Union[GridDataset, Sequence[GridDataset]],
    variant: Variant,
    params: GbtParams = GbtParams(),
    anchor: LdfAnchor = LdfAnchor.PARENT,
    eval_datasets: Optional[Sequence[GridDataset]] = None,
) -> TrainedPredictor:
    """
    Fits one boosted model on the pooled edge rows of all grids and scenarios.

    With eval_datasets the per-round validation RMSE (in target space) is
    recorded on predictor.model.history; it never stops training early.
    """
    variant = Variant.parse(variant)
    X, Y = build_training_matrix(datasets, variant, anchor)
    eval_set = None
    if eval_datasets:
        eval_set = build_training_matrix(eval_datasets, variant, anchor)
        logger.info(f"Validation rows: {eval_set[0].shape[0]}")
    logger.info(f"Training {variant.value} predictor on {X.shape[0]} edge rows (LDF anchor: {LdfAnchor(anchor).value})")
    model = fit(X, Y, params, eval_set=eval_set)
    return TrainedPredictor(variant=variant, model=model, ldf_anchor=anchor)


def _checked_order(orientation: Orientation, order: Sequence[int]) -> List[int]:
    order = [int(bus) for bus in order]
    expected = set(orientation.bfs_order[1:])
    if len(order) != len(expected) or set(order) != expected:
        raise BadConfig("Visiting order must list every non-slack bus exactly once")
    seen = {orientation.slack_id}
    for bus in order:
        if orientation.parent[bus] not in seen:
            raise BadConfig(f"Bus {bus} is visited before its parent {orientation.parent[bus]}")
        seen.add(bus)
    return order


def infer(
    grid: RadialGrid,
    orientation: Orientation,
    scenario: Scenario,
    predictor: TrainedPredictor,
    order: Optional[Sequence[int]] = None,
) -> VoltageState:
    """
    Predicts every bus from its already predicted parent, one model call per branch.

    order defaults to the BFS order; any order that visits parents before
    children gives the same result.
    """
    if scenario.n_buses != grid.n_buses:
        raise DimensionMismatch(f"Scenario has {scenario.n_buses} buses, grid has {grid.n_buses}")
    aggregates = aggregate_downstream(grid, orientation, scenario)
    slack_ldf = lindistflow_solve(grid, orientation, scenario) if predictor.ldf_anchor == LdfAnchor.SLACK else None
    visit = orientation.bfs_order[1:] if order is None else _checked_order(orientation, order)

    vm = np.empty(grid.n_buses)
    va = np.empty(grid.n_buses)
    vm[orientation.slack_id] = scenario.slack_vm
    va[orientation.slack_id] = scenario.slack_va
    v0 = scenario.slack_vm

    for bus in visit:
        parent = orientation.parent[bus]
        r = orientation.branch_r[bus]
        x = orientation.branch_x[bus]
        if slack_ldf is None:
            v_ldf, theta_ldf = ldf_voltage(vm[parent], va[parent], r, x, aggregates.p_agg[bus], aggregates.q_agg[bus], v0)
        else:
            v_ldf, theta_ldf = slack_ldf.vm[bus], slack_ldf.va[bus]
        features = [
            vm[parent],
            va[parent],
            r,
            x,
            scenario.p_inj[bus],
            scenario.q_inj[bus],
            aggregates.p_agg[bus],
            aggregates.q_agg[bus],
            v_ldf,
            theta_ldf,
        ]
        prediction = predictor.predict_one(features)
        vm[bus], va[bus] = reconstruct(predictor.variant, prediction, (vm[parent], va[parent]), (v_ldf, theta_ldf))

    return VoltageState(vm, va)


def infer_by_depth(
    grid: RadialGrid, orientation: Orientation, scenario: Scenario, predictor: TrainedPredictor
) -> VoltageState:
    """Same result as infer, one batched model call per BFS depth level"""
    if scenario.n_buses != grid.n_buses:
        raise DimensionMismatch(f"Scenario has {scenario.n_buses} buses, grid has {grid.n_buses}")
    aggregates = aggregate_downstream(grid, orientation, scenario)
    slack_ldf = lindistflow_solve(grid, orientation, scenario) if predictor.ldf_anchor == LdfAnchor.SLACK else None
    parent_of = orientation.parent_array()

    vm = np.empty(grid.n_buses)
    va = np.empty(grid.n_buses)
    vm[orientation.slack_id] = scenario.slack_vm
    va[orientation.slack_id] = scenario.slack_va

    for level in orientation.levels():
        ids = np.array(level, dtype=int)
        parents = parent_of[ids]
        if slack_ldf is None:
            v_ldf, theta_ldf = ldf_voltage(
                vm[parents],
                va[parents],
                orientation.branch_r[ids],
                orientation.branch_x[ids],
                aggregates.p_agg[ids],
                aggregates.q_agg[ids],
                scenario.slack_vm,
            )
        else:
            v_ldf, theta_ldf = slack_ldf.vm[ids], slack_ldf.va[ids]
        features = np.column_stack(
            [
                vm[parents],
                va[parents],
                orientation.branch_r[ids],
                orientation.branch_x[ids],
                scenario.p_inj[ids],
                scenario.q_inj[ids],
                aggregates.p_agg[ids],
                aggregates.q_agg[ids],
                v_ldf,
                theta_ldf,
            ]
        )
        prediction = predictor.predict_batch(features)
        child = reconstruct(
            predictor.variant,
            prediction,
            np.column_stack([vm[parents], va[parents]]),
            np.column_stack([v_ldf, theta_ldf]),
        )
        vm[ids] = child[:, 0]
        va[ids] = child[:, 1]

    return VoltageState(vm, va)


def predictor_to_dict(predictor: TrainedPredictor) -> dict:
    document = serialize(predictor.model)
    document["variant"] = predictor.variant.value
    document["feature_order"] = list(predictor.feature_order)
    document["ldf_anchor"] = predictor.ldf_anchor.value
    return document


def predictor_from_dict(document: dict) -> TrainedPredictor:
    if not isinstance(document, dict):
        raise SchemaError(f"Predictor document must be an object, got {type(document).__name__}")
    feature_order = document.get("feature_order")
    if feature_order is None or tuple(feature_order) != FEATURE_ORDER:
        raise SchemaError(f"Predictor feature order {feature_order} does not match {list(FEATURE_ORDER)}")
    try:
        variant = Variant.parse(document["variant"])
        anchor = LdfAnchor(document.get("ldf_anchor", LdfAnchor.PARENT.value))
    except (KeyError, ValueError) as e:
        raise SchemaError(f"Invalid predictor document: {e}") from e
    model = deserialize(document)
    try:
        return TrainedPredictor(variant=variant, model=model, ldf_anchor=anchor)
    except DimensionMismatch as e:
        raise SchemaError(str(e)) from e


def save_predictor(predictor: TrainedPredictor, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(predictor_to_dict(predictor), f)
    logger.info(f"Saved {predictor.variant.value} predictor ({len(predictor.model.trees)} trees) to {path}")
    return path


def load_predictor(path: Union[str, Path]) -> TrainedPredictor:
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path} is not a valid predictor document: {e}") from e
    return predictor_from_dict(document)
