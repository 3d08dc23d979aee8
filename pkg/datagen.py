"""
Synthetic radial grids and DER-augmented injection scenarios, labeled with the AC oracle.

Asset placement (which buses host residential load, PV, EV, heat pump,
battery and their ratings) is drawn once per (grid, scenario seed). Asset
outputs and load levels are redrawn for every scenario.
"""
import logging
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import yaml
from tenacity import Retrying, before_sleep_log, retry_if_exception_type, stop_after_attempt

from analytical import SolverOptions, ac_oracle_solve
from errors import BadConfig, NonConvergence
from grid_model import (
    Branch,
    Bus,
    BusKind,
    GridDataset,
    LabeledSample,
    RadialGrid,
    Scenario,
    grid_hash,
    power_mismatch,
    validate_grid,
    write_dataset,
)
from path_engine import orient

logger = logging.getLogger(__name__)

# bus counts of the public LV reference feeders used for benchmarking
REFERENCE_GRID_SIZES: Tuple[int, ...] = (15, 44, 59, 97, 111, 116, 129)


def _check_range(name: str, bounds, lower: float = 0.0, strict: bool = False) -> Tuple[float, float]:
    try:
        lo, hi = (float(v) for v in bounds)
    except (TypeError, ValueError) as e:
        raise BadConfig(f"{name} must be a (low, high) pair, got {bounds}") from e
    if lo > hi or lo < lower or (strict and lo <= lower):
        raise BadConfig(f"{name} must satisfy {lower} {'<' if strict else '<='} low <= high, got ({lo}, {hi})")
    return lo, hi


def _check_fraction(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise BadConfig(f"{name} must be in [0, 1], got {value}")


@dataclass(frozen=True)
class GridGenConfig:
    n_buses: int = 116
    branching: float = 1.5
    r_range: Tuple[float, float] = (0.002, 0.02)
    x_range: Tuple[float, float] = (0.001, 0.008)
    seed: int = 0

    def __post_init__(self):
        if int(self.n_buses) < 2:
            raise BadConfig(f"n_buses must be at least 2, got {self.n_buses}")
        if self.branching < 1.0:
            raise BadConfig(f"branching must be at least 1 child per bus, got {self.branching}")
        object.__setattr__(self, "r_range", _check_range("r_range", self.r_range, strict=True))
        object.__setattr__(self, "x_range", _check_range("x_range", self.x_range, strict=True))


@dataclass(frozen=True)
class ScenarioGenConfig:
    base_load_kw_range: Tuple[float, float] = (1.0, 4.0)
    load_scale_choices: Tuple[float, ...] = (0.5, 1.0, 2.5)
    load_scale_weights: Tuple[float, ...] = (0.25, 0.5, 0.25)
    load_bus_fraction: float = 0.5
    load_variation_range: Tuple[float, float] = (0.7, 1.3)
    pv_penetration: float = 0.40
    pv_kwp_range: Tuple[float, float] = (5.0, 15.0)
    pv_output_range: Tuple[float, float] = (0.0, 1.0)
    ev_penetration: float = 0.20
    ev_kw: float = 11.0
    ev_charging_probability: float = 0.5
    hp_penetration: float = 0.15
    hp_kw_range: Tuple[float, float] = (3.0, 6.0)
    hp_duty_range: Tuple[float, float] = (0.2, 1.0)
    batt_fraction_of_pv: float = 0.30
    batt_kw: float = 5.0
    power_factor: float = 0.95
    flexible_load_power_factor: float = 1.0
    s_base_mva: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("base_load_kw_range", "load_variation_range", "pv_kwp_range", "pv_output_range", "hp_kw_range", "hp_duty_range"):
            object.__setattr__(self, name, _check_range(name, getattr(self, name)))
        for name in (
            "load_bus_fraction",
            "pv_penetration",
            "ev_penetration",
            "ev_charging_probability",
            "hp_penetration",
            "batt_fraction_of_pv",
        ):
            _check_fraction(name, getattr(self, name))

        choices = tuple(float(c) for c in self.load_scale_choices)
        weights = tuple(float(w) for w in self.load_scale_weights)
        if not choices or len(choices) != len(weights):
            raise BadConfig(f"load_scale_choices {choices} and load_scale_weights {weights} must have equal, nonzero length")
        if any(c < 0 for c in choices) or any(w < 0 for w in weights) or sum(weights) <= 0:
            raise BadConfig("Load scales and their weights must be non-negative with a positive weight sum")
        object.__setattr__(self, "load_scale_choices", choices)
        object.__setattr__(self, "load_scale_weights", weights)

        if self.ev_kw < 0 or self.batt_kw < 0:
            raise BadConfig("ev_kw and batt_kw must be non-negative")
        for name in ("power_factor", "flexible_load_power_factor"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise BadConfig(f"{name} must be in (0, 1], got {getattr(self, name)}")
        if not self.s_base_mva > 0:
            raise BadConfig(f"s_base_mva must be positive, got {self.s_base_mva}")


@dataclass(frozen=True)
class DatasetOptions:
    solver: SolverOptions = field(default_factory=SolverOptions)
    max_attempts: int = 5
    mismatch_tol: float = 1e-8

    def __post_init__(self):
        if self.max_attempts < 1:
            raise BadConfig(f"max_attempts must be at least 1, got {self.max_attempts}")
        if not self.mismatch_tol > 0:
            raise BadConfig(f"mismatch_tol must be positive, got {self.mismatch_tol}")


@dataclass(frozen=True, eq=False)
class AssetPlacement:
    """Per-bus asset ratings in kW; zero where a bus hosts no such asset"""
    base_load_kw: np.ndarray
    pv_kwp: np.ndarray
    ev_kw: np.ndarray
    hp_kw: np.ndarray
    batt_kw: np.ndarray

    @property
    def n_load_buses(self) -> int:
        return int(np.count_nonzero(self.base_load_kw))

    @property
    def n_pv(self) -> int:
        return int(np.count_nonzero(self.pv_kwp))


def gen_grid(config: GridGenConfig) -> RadialGrid:
    """
    Random radial feeder rooted at the slack (bus 0).

    Buses are numbered in creation order along a breadth-first growth where
    every bus spawns 1 + Poisson(branching - 1) children until n_buses exist.
    """
    rng = np.random.default_rng(config.seed)
    n_buses = int(config.n_buses)
    branches: List[Branch] = []
    queue = deque([0])
    next_id = 1
    while next_id < n_buses:
        bus = queue.popleft()
        n_children = 1 + int(rng.poisson(config.branching - 1.0))
        for _ in range(min(n_children, n_buses - next_id)):
            branches.append(
                Branch(
                    from_bus=bus,
                    to_bus=next_id,
                    r=float(rng.uniform(*config.r_range)),
                    x=float(rng.uniform(*config.x_range)),
                )
            )
            queue.append(next_id)
            next_id += 1

    buses = [Bus(0, BusKind.SLACK)] + [Bus(i, BusKind.PQ) for i in range(1, n_buses)]
    return validate_grid(RadialGrid(buses=tuple(buses), branches=tuple(branches), slack_id=0))


def _grid_stream(grid: RadialGrid) -> int:
    return int(grid_hash(grid)[:8], 16)


def place_assets(grid: RadialGrid, config: ScenarioGenConfig) -> AssetPlacement:
    rng = np.random.default_rng([config.seed, _grid_stream(grid)])
    n_buses = grid.n_buses
    pq = np.array([bus.id for bus in grid.buses if bus.kind == BusKind.PQ], dtype=int)
    n_load = int(round(config.load_bus_fraction * len(pq)))
    if config.load_bus_fraction > 0 and len(pq) > 0:
        n_load = max(n_load, 1)
    hosts = np.sort(rng.choice(pq, size=n_load, replace=False)) if n_load else np.array([], dtype=int)

    weights = np.array(config.load_scale_weights) / sum(config.load_scale_weights)
    scales = rng.choice(np.array(config.load_scale_choices), size=n_load, p=weights)
    base_load_kw = np.zeros(n_buses)
    base_load_kw[hosts] = rng.uniform(*config.base_load_kw_range, size=n_load) * scales

    has_pv = rng.random(n_load) < config.pv_penetration
    has_ev = rng.random(n_load) < config.ev_penetration
    has_hp = rng.random(n_load) < config.hp_penetration
    has_batt = has_pv & (rng.random(n_load) < config.batt_fraction_of_pv)

    pv_kwp = np.zeros(n_buses)
    pv_kwp[hosts] = np.where(has_pv, rng.uniform(*config.pv_kwp_range, size=n_load), 0.0)
    ev_kw = np.zeros(n_buses)
    ev_kw[hosts] = np.where(has_ev, config.ev_kw, 0.0)
    hp_kw = np.zeros(n_buses)
    hp_kw[hosts] = np.where(has_hp, rng.uniform(*config.hp_kw_range, size=n_load), 0.0)
    batt_kw = np.zeros(n_buses)
    batt_kw[hosts] = np.where(has_batt, config.batt_kw, 0.0)

    return AssetPlacement(base_load_kw=base_load_kw, pv_kwp=pv_kwp, ev_kw=ev_kw, hp_kw=hp_kw, batt_kw=batt_kw)


def _reactive_share(power_factor: float) -> float:
    return float(np.sqrt(1.0 - power_factor**2) / power_factor)


def gen_scenario(
    grid: RadialGrid,
    config: ScenarioGenConfig,
    draw_index: int,
    redraw: int = 0,
    placement: Optional[AssetPlacement] = None,
) -> Scenario:
    """
    One injection scenario; net injection = generation - consumption, in p.u. of s_base_mva.

    redraw selects an independent random stream for the same draw_index.
    """
    if placement is None:
        placement = place_assets(grid, config)
    rng = np.random.default_rng([config.seed, _grid_stream(grid), int(draw_index), int(redraw)])
    n_buses = grid.n_buses

    load_kw = placement.base_load_kw * rng.uniform(*config.load_variation_range, size=n_buses)
    pv_kw = placement.pv_kwp * rng.uniform(*config.pv_output_range, size=n_buses)
    ev_kw = placement.ev_kw * (rng.random(n_buses) < config.ev_charging_probability)
    hp_kw = placement.hp_kw * rng.uniform(*config.hp_duty_range, size=n_buses)
    # positive discharges into the grid
    batt_kw = placement.batt_kw * rng.uniform(-1.0, 1.0, size=n_buses)

    flexible_kw = ev_kw + hp_kw
    p_kw = pv_kw + batt_kw - load_kw - flexible_kw
    q_kvar = -(
        load_kw * _reactive_share(config.power_factor)
        + flexible_kw * _reactive_share(config.flexible_load_power_factor)
    )

    to_pu = 1.0 / (1000.0 * config.s_base_mva)
    p_inj = p_kw * to_pu
    q_inj = q_kvar * to_pu
    p_inj[grid.slack_id] = 0.0
    q_inj[grid.slack_id] = 0.0
    return Scenario(p_inj=p_inj, q_inj=q_inj, slack_vm=1.0, slack_va=0.0)


def _max_pq_mismatch(grid: RadialGrid, scenario: Scenario, truth) -> float:
    d_p, d_q = power_mismatch(grid, scenario, truth)
    pq = np.array([bus.id != grid.slack_id for bus in grid.buses])
    if not pq.any():
        return 0.0
    return float(max(np.max(np.abs(d_p[pq])), np.max(np.abs(d_q[pq]))))


def build_dataset(
    grid: RadialGrid,
    scenario_config: ScenarioGenConfig,
    n_samples: int,
    opts: DatasetOptions = DatasetOptions(),
    path: Optional[Union[str, Path]] = None,
    name: str = "",
) -> GridDataset:
    """
    n_samples oracle-labeled scenarios in draw_index order, optionally written as JSON lines.

    A scenario whose oracle run fails to converge, or whose solution misses
    the mismatch bound, is redrawn from a fresh stream up to
    opts.max_attempts times; then NonConvergence names the sample index.
    """
    if n_samples < 0:
        raise BadConfig(f"n_samples must be non-negative, got {n_samples}")
    orientation = orient(grid)
    placement = place_assets(grid, scenario_config)
    logger.info(
        f"Generating {n_samples} samples on a {grid.n_buses}-bus grid "
        f"({placement.n_load_buses} load buses, {placement.n_pv} PV sites)"
    )

    samples: List[LabeledSample] = []
    for draw_index in range(n_samples):
        try:
            for attempt in Retrying(
                stop=stop_after_attempt(opts.max_attempts),
                retry=retry_if_exception_type(NonConvergence),
                before_sleep=before_sleep_log(logger, logging.WARNING),
                reraise=True,
            ):
                with attempt:
                    redraw = attempt.retry_state.attempt_number - 1
                    scenario = gen_scenario(grid, scenario_config, draw_index, redraw=redraw, placement=placement)
                    truth = ac_oracle_solve(grid, orientation, scenario, opts.solver)
                    mismatch = _max_pq_mismatch(grid, scenario, truth)
                    if mismatch >= opts.mismatch_tol:
                        raise NonConvergence(
                            f"Oracle solution misses the mismatch bound ({mismatch:.2e} >= {opts.mismatch_tol:.0e})",
                            state=truth,
                            residual=mismatch,
                        )
        except NonConvergence as e:
            logger.error(f"Sample {draw_index} failed after {opts.max_attempts} attempts: {e}")
            raise NonConvergence(
                f"Sample {draw_index}: {e}", state=e.state, residual=e.residual, iterations=e.iterations
            ) from e
        samples.append(LabeledSample(scenario=scenario, truth=truth))

    dataset = GridDataset(grid=grid, samples=tuple(samples), name=name)
    if path is not None:
        write_dataset(path, dataset.samples)
    return dataset


def kerber_like_configs(seed: int = 0) -> Tuple[GridGenConfig, ScenarioGenConfig]:
    """
    116-bus village feeder with 57 residential load buses.

    Long, resistive cable runs and a 400 kVA transformer base put the deepest
    buses a few percent below the slack voltage.
    """
    return (
        GridGenConfig(n_buses=116, r_range=(0.01, 0.04), x_range=(0.004, 0.015), seed=seed),
        ScenarioGenConfig(load_bus_fraction=57 / 115, s_base_mva=0.4, seed=seed),
    )


def _from_section(cls, section: Optional[dict], label: str):
    section = dict(section or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(section) - known)
    if unknown:
        raise BadConfig(f"Unknown {label} settings: {unknown}")
    for key, value in section.items():
        if isinstance(value, list):
            section[key] = tuple(value)
    return cls(**section)


def generator_config_from_dict(document: dict) -> Tuple[GridGenConfig, ScenarioGenConfig]:
    if not isinstance(document, dict):
        raise BadConfig("Generator config must be a mapping with 'grid' and 'scenario' sections")
    unknown = sorted(set(document) - {"grid", "scenario"})
    if unknown:
        raise BadConfig(f"Unknown generator config sections: {unknown}")
    return (
        _from_section(GridGenConfig, document.get("grid"), "grid"),
        _from_section(ScenarioGenConfig, document.get("scenario"), "scenario"),
    )


def generator_config_to_dict(grid_config: GridGenConfig, scenario_config: ScenarioGenConfig) -> Dict[str, dict]:
    def plain(config) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(config).items()}

    return {"grid": plain(grid_config), "scenario": plain(scenario_config)}


def load_generator_config(path: Union[str, Path]) -> Tuple[GridGenConfig, ScenarioGenConfig]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = yaml.safe_load(f)
    except yaml.YAMLError as e:
        logger.error(f"YAML parsing error in {path}: {e}")
        raise BadConfig(f"{path} is not valid YAML/JSON: {e}") from e
    return generator_config_from_dict(document)
