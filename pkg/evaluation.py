"""
Accuracy metrics, the per-hop error profile and the inference-time scaling study.
"""
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from datagen import GridGenConfig, ScenarioGenConfig, gen_grid, gen_scenario, place_assets
from errors import BadConfig, DimensionMismatch, EmptyInput
from grid_model import GridDataset, RadialGrid, VoltageState
from path_engine import Orientation, orient
from plugins.voltage_method import VoltageMethod

logger = logging.getLogger(__name__)

PER_HOP_COLUMNS = ["depth", "rmse_vm", "rmse_va", "count"]
TimingHook = Callable[[str, int], None]


def _as_exclusions(slack_ids, n_samples: int) -> List[Optional[int]]:
    if slack_ids is None or isinstance(slack_ids, (int, np.integer)):
        return [slack_ids] * n_samples
    slack_ids = list(slack_ids)
    if len(slack_ids) != n_samples:
        raise DimensionMismatch(f"{len(slack_ids)} slack ids for {n_samples} samples")
    return slack_ids


def _squared_errors(
    predictions: Sequence[VoltageState], truths: Sequence[VoltageState], slack_ids
) -> Tuple[np.ndarray, np.ndarray]:
    if len(predictions) != len(truths):
        raise DimensionMismatch(f"{len(predictions)} predictions but {len(truths)} truths")
    if not predictions:
        raise EmptyInput("No samples to score")

    vm_blocks, va_blocks = [], []
    for index, (prediction, truth, slack) in enumerate(zip(predictions, truths, _as_exclusions(slack_ids, len(truths)))):
        if prediction.n_buses != truth.n_buses:
            raise DimensionMismatch(f"Sample {index}: prediction has {prediction.n_buses} buses, truth {truth.n_buses}")
        keep = np.ones(truth.n_buses, dtype=bool)
        if slack is not None:
            keep[slack] = False
        vm_blocks.append((prediction.vm[keep] - truth.vm[keep]) ** 2)
        va_blocks.append((prediction.va[keep] - truth.va[keep]) ** 2)
    return np.concatenate(vm_blocks), np.concatenate(va_blocks)


def rmse(
    predictions: Sequence[VoltageState],
    truths: Sequence[VoltageState],
    slack_ids: Union[None, int, Sequence[Optional[int]]] = None,
) -> Tuple[float, float]:
    """
    (rmse_vm, rmse_va) pooled over all buses of all samples.

    slack_ids names the bus left out of each sample's pool, either one id for
    every sample or one per sample; None scores every bus.
    """
    vm_sq, va_sq = _squared_errors(predictions, truths, slack_ids)
    if vm_sq.size == 0:
        raise EmptyInput("Every bus is excluded from the error pool")
    return float(np.sqrt(vm_sq.mean())), float(np.sqrt(va_sq.mean()))


def _hop_sums(
    orientation: Orientation,
    predictions: Sequence[VoltageState],
    truths: Sequence[VoltageState],
    include_slack: bool = False,
) -> Dict[int, Tuple[float, float, int]]:
    """depth -> (sum of squared vm errors, sum of squared va errors, count)"""
    if len(predictions) != len(truths):
        raise DimensionMismatch(f"{len(predictions)} predictions but {len(truths)} truths")
    if not predictions:
        raise EmptyInput("No samples to score")
    depth = orientation.depth
    sums: Dict[int, Tuple[float, float, int]] = {}
    for prediction, truth in zip(predictions, truths):
        if prediction.n_buses != orientation.n_buses or truth.n_buses != orientation.n_buses:
            raise DimensionMismatch(f"Voltage states do not match the {orientation.n_buses}-bus grid")
        vm_sq = (prediction.vm - truth.vm) ** 2
        va_sq = (prediction.va - truth.va) ** 2
        for d in range(0 if include_slack else 1, orientation.max_depth + 1):
            at_depth = depth == d
            vm_sum, va_sum, count = sums.get(d, (0.0, 0.0, 0))
            sums[d] = (vm_sum + float(vm_sq[at_depth].sum()), va_sum + float(va_sq[at_depth].sum()), count + int(at_depth.sum()))
    return sums


def _profile_frame(sums: Dict[int, Tuple[float, float, int]]) -> pd.DataFrame:
    rows = [
        {
            "depth": d,
            "rmse_vm": float(np.sqrt(vm_sum / count)),
            "rmse_va": float(np.sqrt(va_sum / count)),
            "count": count,
        }
        for d, (vm_sum, va_sum, count) in sorted(sums.items())
        if count > 0
    ]
    return pd.DataFrame(rows, columns=PER_HOP_COLUMNS)


def per_hop_profile(
    grid: RadialGrid,
    orientation: Orientation,
    predictions: Sequence[VoltageState],
    truths: Sequence[VoltageState],
    include_slack: bool = False,
) -> pd.DataFrame:
    """RMSE per BFS depth; count is buses at that depth times samples"""
    if orientation.n_buses != grid.n_buses:
        raise DimensionMismatch(f"Orientation covers {orientation.n_buses} buses, grid has {grid.n_buses}")
    return _profile_frame(_hop_sums(orientation, predictions, truths, include_slack))


def pooled_from_profile(profile: pd.DataFrame) -> Tuple[float, float]:
    """Count-weighted recombination of per-hop RMSEs into the pooled RMSE"""
    count = profile["count"].to_numpy(dtype=float)
    total = count.sum()
    if total == 0:
        raise EmptyInput("Profile holds no buses")
    vm = float(np.sqrt((count * profile["rmse_vm"].to_numpy() ** 2).sum() / total))
    va = float(np.sqrt((count * profile["rmse_va"].to_numpy() ** 2).sum() / total))
    return vm, va


@dataclass
class EvalReport:
    method: str
    rmse_vm: float
    rmse_va: float
    per_hop: pd.DataFrame
    n_samples: int
    n_buses: int
    grids: List[str] = field(default_factory=list)
    include_slack: bool = False

    @property
    def hop_drift_vm(self) -> float:
        """RMSE VM at the deepest hop minus RMSE VM at the first hop"""
        return float(self.per_hop["rmse_vm"].iloc[-1] - self.per_hop["rmse_vm"].iloc[0])

    @property
    def hop_drift_va(self) -> float:
        return float(self.per_hop["rmse_va"].iloc[-1] - self.per_hop["rmse_va"].iloc[0])

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "rmse_vm": self.rmse_vm,
            "rmse_va": self.rmse_va,
            "hop_drift_vm": self.hop_drift_vm,
            "hop_drift_va": self.hop_drift_va,
            "n_samples": self.n_samples,
            "n_buses": self.n_buses,
            "grids": list(self.grids),
            "include_slack": self.include_slack,
            "per_hop": self.per_hop.to_dict(orient="records"),
        }

    def save(self, out_dir: Union[str, Path]) -> List[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report_path = out_dir / "eval_report.json"
        with open(report_path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")
        csv_path = out_dir / "per_hop.csv"
        self.per_hop.to_csv(csv_path, index=False)
        return [report_path, csv_path]


def evaluate(method: VoltageMethod, datasets: Sequence[GridDataset], include_slack: bool = False) -> EvalReport:
    """
    Runs method on every labeled scenario and pools the errors over all grids.

    The method must already be prepared.
    """
    if not datasets or not any(dataset.samples for dataset in datasets):
        raise EmptyInput("No labeled scenarios to evaluate on")

    predictions: List[VoltageState] = []
    truths: List[VoltageState] = []
    slack_ids: List[Optional[int]] = []
    hop_sums: Dict[int, Tuple[float, float, int]] = {}
    n_buses = 0
    for dataset in datasets:
        if not dataset.samples:
            continue
        orientation = orient(dataset.grid)
        grid_predictions = [method.solve(dataset.grid, orientation, sample.scenario) for sample in dataset.samples]
        grid_truths = [sample.truth for sample in dataset.samples]
        for d, (vm_sum, va_sum, count) in _hop_sums(orientation, grid_predictions, grid_truths, include_slack).items():
            acc_vm, acc_va, acc_count = hop_sums.get(d, (0.0, 0.0, 0))
            hop_sums[d] = (acc_vm + vm_sum, acc_va + va_sum, acc_count + count)
        predictions.extend(grid_predictions)
        truths.extend(grid_truths)
        slack_ids.extend([None if include_slack else dataset.grid.slack_id] * len(dataset.samples))
        n_buses += dataset.grid.n_buses
        logger.info(f"{method.name}: scored {len(dataset.samples)} scenarios of {dataset.name or 'grid'}")

    rmse_vm, rmse_va = rmse(predictions, truths, slack_ids)
    report = EvalReport(
        method=method.name,
        rmse_vm=rmse_vm,
        rmse_va=rmse_va,
        per_hop=_profile_frame(hop_sums),
        n_samples=len(truths),
        n_buses=n_buses,
        grids=[dataset.name for dataset in datasets if dataset.samples],
        include_slack=include_slack,
    )
    logger.info(f"{method.name}: RMSE VM {rmse_vm:.3e} p.u., RMSE VA {rmse_va:.3e} deg over {len(truths)} scenarios")
    return report


@dataclass(frozen=True)
class ScalingPoint:
    n_buses: int
    mean_inference_ms: float
    std_ms: float


@dataclass
class ScalingReport:
    method: str
    points: List[ScalingPoint]
    slope: float
    intercept: float
    r2: float

    @property
    def linear_fit(self) -> Tuple[float, float, float]:
        return self.slope, self.intercept, self.r2

    def points_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [vars(point) for point in self.points], columns=["n_buses", "mean_inference_ms", "std_ms"]
        )

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "points": [vars(point) for point in self.points],
            "linear_fit": {"slope": self.slope, "intercept": self.intercept, "r2": self.r2},
        }

    def save(self, out_dir: Union[str, Path]) -> List[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report_path = out_dir / "scaling_report.json"
        with open(report_path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")
        csv_path = out_dir / "scaling_points.csv"
        self.points_frame().to_csv(csv_path, index=False)
        return [report_path, csv_path]


def linear_fit(sizes: Sequence[float], times: Sequence[float]) -> Tuple[float, float, float]:
    """Least-squares (slope, intercept, r2), r2 clamped to [0, 1]"""
    x = np.asarray(sizes, dtype=float)
    y = np.asarray(times, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    ss_res = float(((y - (slope * x + intercept)) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return float(slope), float(intercept), float(min(1.0, max(0.0, r2)))


def _size_seed(seed: int, n_buses: int) -> int:
    return int(np.random.SeedSequence([seed, n_buses]).generate_state(1)[0])


def scaling_study(
    method: VoltageMethod,
    grid_sizes: Sequence[int],
    scenarios_per_size: int = 5,
    repetitions: int = 10,
    warmup: int = 3,
    seed: int = 0,
    hook: Optional[TimingHook] = None,
    grid_config: Optional[GridGenConfig] = None,
    scenario_config: Optional[ScenarioGenConfig] = None,
) -> ScalingReport:
    """
    Times method.solve on generated grids of every size.

    Per scenario the median of `repetitions` timed runs (after `warmup`
    untimed ones) is kept; each point is the mean and standard deviation of
    those medians. Grid and scenario generation happen outside the measured
    windows; hook receives ("start", n_buses) and ("stop", n_buses) around
    each one.
    """
    sizes = [int(n) for n in grid_sizes]
    if len(set(sizes)) != len(sizes):
        raise BadConfig(f"Grid sizes must be distinct, got {sizes}")
    if len(sizes) < 3:
        raise BadConfig(f"A linear fit needs at least 3 grid sizes, got {len(sizes)}")
    if scenarios_per_size < 1 or repetitions < 1 or warmup < 0:
        raise BadConfig("scenarios_per_size and repetitions must be positive, warmup non-negative")

    grid_config = grid_config or GridGenConfig()
    scenario_config = scenario_config or ScenarioGenConfig()
    points: List[ScalingPoint] = []
    for n_buses in sorted(sizes):
        size_seed = _size_seed(seed, n_buses)
        grid = gen_grid(
            GridGenConfig(
                n_buses=n_buses,
                branching=grid_config.branching,
                r_range=grid_config.r_range,
                x_range=grid_config.x_range,
                seed=size_seed,
            )
        )
        orientation = orient(grid)
        placement = place_assets(grid, scenario_config)
        scenarios = [gen_scenario(grid, scenario_config, i, placement=placement) for i in range(scenarios_per_size)]

        medians = []
        for scenario in scenarios:
            for _ in range(warmup):
                method.solve(grid, orientation, scenario)
            timings = []
            for _ in range(repetitions):
                if hook is not None:
                    hook("start", n_buses)
                start = time.perf_counter()
                method.solve(grid, orientation, scenario)
                elapsed = time.perf_counter() - start
                if hook is not None:
                    hook("stop", n_buses)
                timings.append(elapsed * 1000.0)
            medians.append(float(np.median(timings)))

        point = ScalingPoint(n_buses=n_buses, mean_inference_ms=float(np.mean(medians)), std_ms=float(np.std(medians)))
        logger.info(f"{method.name}: {n_buses} buses, {point.mean_inference_ms:.3f} +- {point.std_ms:.3f} ms")
        points.append(point)

    slope, intercept, r2 = linear_fit([p.n_buses for p in points], [p.mean_inference_ms for p in points])
    logger.info(f"{method.name}: {slope:.4f} ms per bus, intercept {intercept:.3f} ms, r2 {r2:.3f}")
    return ScalingReport(method=method.name, points=points, slope=slope, intercept=intercept, r2=r2)
