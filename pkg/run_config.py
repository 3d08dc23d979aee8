"""
Run configuration shared by all CLI commands.

A run config file is YAML or JSON; a run manifest is accepted too, its
`config` section is used. Command-line flags override file values.
"""
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import yaml

from analytical import SolverOptions
from datagen import REFERENCE_GRID_SIZES
from errors import BadConfig
from gbt import GbtParams
from sequential_model import LdfAnchor
from variants import Variant

logger = logging.getLogger(__name__)

SPLIT_MODES = ("scenario", "grid")


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "out"

    # generate
    generator_config: Optional[str] = None
    preset: Optional[str] = None
    grid_sizes: List[int] = field(default_factory=lambda: [116])
    n_samples: int = 300

    # train / eval
    datasets: List[str] = field(default_factory=list)
    test_datasets: List[str] = field(default_factory=list)
    variant: str = Variant.PARENT_RESIDUAL.value
    ldf_anchor: str = LdfAnchor.PARENT.value
    gbt: GbtParams = field(default_factory=GbtParams)
    split: Tuple[float, float, float] = (4.0, 1.0, 1.0)
    split_mode: str = "scenario"
    splits: Optional[str] = None
    include_slack: bool = False

    # eval / solve / bench
    method: str = "xgb-parent"
    predictor: Optional[str] = None
    solver: SolverOptions = field(default_factory=SolverOptions)
    by_depth: bool = False
    grid: Optional[str] = None
    scenario: Optional[str] = None
    bench_sizes: List[int] = field(default_factory=lambda: list(REFERENCE_GRID_SIZES))
    scenarios_per_size: int = 5
    repetitions: int = 10
    warmup: int = 3

    def __post_init__(self):
        if isinstance(self.gbt, dict):
            self.gbt = GbtParams.from_dict(self.gbt)
        if isinstance(self.solver, dict):
            self.solver = SolverOptions(**self.solver)
        self._normalized_split(self.split)
        self.split = tuple(float(r) for r in self.split)
        if self.split_mode not in SPLIT_MODES:
            raise BadConfig(f"split_mode must be one of {SPLIT_MODES}, got '{self.split_mode}'")
        try:
            self.variant = Variant.parse(self.variant).value
            self.ldf_anchor = LdfAnchor(self.ldf_anchor).value
        except ValueError as e:
            raise BadConfig(str(e)) from e
        if self.preset not in (None, "kerber"):
            raise BadConfig(f"Unknown generator preset '{self.preset}'")
        if self.n_samples < 0:
            raise BadConfig(f"n_samples must be non-negative, got {self.n_samples}")
        self.grid_sizes = [int(n) for n in self.grid_sizes]
        self.bench_sizes = [int(n) for n in self.bench_sizes]
        self.datasets = [str(d) for d in self.datasets]
        self.test_datasets = [str(d) for d in self.test_datasets]

    @property
    def split_fractions(self) -> Tuple[float, float, float]:
        return self._normalized_split(self.split)

    @staticmethod
    def _normalized_split(split) -> Tuple[float, float, float]:
        try:
            ratios = tuple(float(r) for r in split)
        except (TypeError, ValueError) as e:
            raise BadConfig(f"split must hold three ratios, got {split}") from e
        if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) <= 0:
            raise BadConfig(f"split must hold three non-negative ratios with a positive sum, got {split}")
        total = sum(ratios)
        return tuple(r / total for r in ratios)

    def to_dict(self) -> dict:
        document = asdict(self)
        document["gbt"] = self.gbt.to_dict()
        document["split"] = list(self.split)
        return document

    @classmethod
    def from_dict(cls, document: Optional[Dict[str, Any]]) -> "RunConfig":
        document = dict(document or {})
        if "command" in document and isinstance(document.get("config"), dict):
            document = dict(document["config"])
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(document) - known)
        if unknown:
            raise BadConfig(f"Unknown run config settings: {unknown}")
        try:
            return cls(**document)
        except TypeError as e:
            raise BadConfig(f"Invalid run config: {e}") from e

    def with_overrides(self, overrides: Dict[str, Any]) -> "RunConfig":
        """Copy with every non-None override applied (flags over file values)"""
        values = {key: value for key, value in overrides.items() if value is not None}
        gbt_values = {key[4:]: values.pop(key) for key in list(values) if key.startswith("gbt_")}
        solver_values = {key[7:]: values.pop(key) for key in list(values) if key.startswith("solver_")}
        config = replace(self, **values) if values else self
        if gbt_values:
            config = replace(config, gbt=GbtParams.from_dict({**config.gbt.to_dict(), **gbt_values}))
        if solver_values:
            config = replace(config, solver=SolverOptions(**{**asdict(config.solver), **solver_values}))
        return config


def load_run_config(path: Optional[Union[str, Path]]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = yaml.safe_load(f)
    except yaml.YAMLError as e:
        logger.error(f"YAML parsing error in {path}: {e}")
        raise BadConfig(f"{path} is not valid YAML/JSON: {e}") from e
    if document is not None and not isinstance(document, dict):
        raise BadConfig(f"{path} must hold a mapping of settings")
    return RunConfig.from_dict(document)


def derive_seeds(seed: int, count: int) -> List[int]:
    """count independent 32-bit seeds from one root seed"""
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(count)]


def split_indices(n_samples: int, ratios: Tuple[float, float, float], seed: int) -> Dict[str, List[int]]:
    """Disjoint train / val / test partition of range(n_samples)"""
    order = np.random.default_rng(seed).permutation(n_samples)
    n_train = int(round(n_samples * ratios[0]))
    n_val = min(int(round(n_samples * ratios[1])), n_samples - n_train)
    return {
        "train": sorted(int(i) for i in order[:n_train]),
        "val": sorted(int(i) for i in order[n_train : n_train + n_val]),
        "test": sorted(int(i) for i in order[n_train + n_val :]),
    }
