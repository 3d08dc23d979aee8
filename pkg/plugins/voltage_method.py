from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, Optional
import logging
import time

from errors import BoostRpfError
from grid_model import RadialGrid, Scenario, VoltageState
from path_engine import Orientation


@dataclass
class MethodResult:
    """Standardized return type of voltage method runs"""
    success: bool
    method: str
    state: Optional[VoltageState] = None
    elapsed_ms: float = 0.0
    metadata: Optional[dict] = None
    error: Optional[BoostRpfError] = None

    @property
    def error_message(self) -> Optional[str]:
        return None if self.error is None else str(self.error)


class VoltageMethod(ABC):
    """
    A way of computing the bus voltages of one scenario on a radial grid.

    Methods are created by the MethodLoader, configured through the fluent
    setters and prepared once before any timed solve.
    """

    def __init__(self):
        self.name = self.__class__.__name__
        self.options: Dict[str, Any] = {}
        self.logger = logging.getLogger(self.__class__.__name__)

    def set_name(self, name: str) -> 'VoltageMethod':
        self.name = name
        return self

    def set_logger(self, logger: logging.Logger) -> 'VoltageMethod':
        self.logger = logger
        return self

    def set_options(self, options: Optional[Dict[str, Any]]) -> 'VoltageMethod':
        self.options = dict(options or {})
        return self

    def prepare(self) -> 'VoltageMethod':
        """Loads whatever the method needs before solving; no-op by default"""
        return self

    @abstractmethod
    def solve(self, grid: RadialGrid, orientation: Orientation, scenario: Scenario) -> VoltageState:
        pass

    def create_result(self, success: bool, **kwargs) -> MethodResult:
        """Factory method for creating MethodResult instances"""
        if kwargs.get("metadata") is None:
            kwargs["metadata"] = {}
        return MethodResult(success=success, method=self.name, **kwargs)

    def run(self, grid: RadialGrid, orientation: Orientation, scenario: Scenario) -> MethodResult:
        """solve() with wall-clock timing; package errors become a failed result"""
        start = time.perf_counter()
        try:
            state = self.solve(grid, orientation, scenario)
        except BoostRpfError as e:
            self.logger.error(f"{self.name} failed on a {grid.n_buses}-bus grid: {e}")
            return self.create_result(False, elapsed_ms=(time.perf_counter() - start) * 1000.0, error=e)
        elapsed_ms = (time.perf_counter() - start) * 1000.0
        return self.create_result(True, state=state, elapsed_ms=elapsed_ms, metadata={"n_buses": grid.n_buses})
