from typing import Optional

from errors import BadConfig
from grid_model import RadialGrid, Scenario, VoltageState
from path_engine import Orientation
from plugins.voltage_method import VoltageMethod
from sequential_model import TrainedPredictor, infer, infer_by_depth, load_predictor
from variants import Variant


class BoostedMethod(VoltageMethod):
    """
    Autoregressive inference with a trained predictor of a fixed variant.

    Options:
        predictor_path: predictor file loaded by prepare()
        by_depth: batch the model calls per BFS depth level (default False)
    """

    variant: Variant = Variant.PARENT_RESIDUAL

    def __init__(self):
        super().__init__()
        self.predictor: Optional[TrainedPredictor] = None

    def set_predictor(self, predictor: TrainedPredictor) -> 'BoostedMethod':
        if predictor.variant != self.variant:
            raise BadConfig(f"{self.name} needs a '{self.variant.value}' predictor, got '{predictor.variant.value}'")
        self.predictor = predictor
        return self

    def prepare(self) -> 'VoltageMethod':
        if self.predictor is not None:
            return self
        path = self.options.get("predictor_path")
        if not path:
            self.logger.error(f"{self.name} has no predictor_path option")
            raise BadConfig(f"Method {self.name} needs a predictor file (--predictor)")
        self.set_predictor(load_predictor(path))
        self.logger.info(f"{self.name} loaded {len(self.predictor.model.trees)} trees from {path}")
        return self

    def solve(self, grid: RadialGrid, orientation: Orientation, scenario: Scenario) -> VoltageState:
        if self.predictor is None:
            self.prepare()
        if self.options.get("by_depth", False):
            return infer_by_depth(grid, orientation, scenario, self.predictor)
        return infer(grid, orientation, scenario, self.predictor)


class XgbAbsoluteMethod(BoostedMethod):
    variant = Variant.ABSOLUTE


class XgbParentMethod(BoostedMethod):
    variant = Variant.PARENT_RESIDUAL


class XgbLdfMethod(BoostedMethod):
    variant = Variant.PHYSICS_RESIDUAL
