from typing import Optional

from analytical import SolverOptions, ac_oracle_solve, distflow_solve, lindistflow_solve
from grid_model import RadialGrid, Scenario, VoltageState
from path_engine import Orientation
from plugins.voltage_method import VoltageMethod


class LinDistFlowMethod(VoltageMethod):

    def solve(self, grid: RadialGrid, orientation: Orientation, scenario: Scenario) -> VoltageState:
        return lindistflow_solve(grid, orientation, scenario)


class _IterativeMethod(VoltageMethod):
    """Reads tol / max_iter from the method options"""

    def __init__(self):
        super().__init__()
        self.opts: Optional[SolverOptions] = None

    def solver_options(self) -> SolverOptions:
        defaults = SolverOptions()
        return SolverOptions(
            tol=float(self.options.get("tol", defaults.tol)),
            max_iter=int(self.options.get("max_iter", defaults.max_iter)),
        )

    def prepare(self) -> 'VoltageMethod':
        self.opts = self.solver_options()
        self.logger.info(f"{self.name} prepared with tol={self.opts.tol:.0e}, max_iter={self.opts.max_iter}")
        return self


class DistFlowMethod(_IterativeMethod):

    def solve(self, grid: RadialGrid, orientation: Orientation, scenario: Scenario) -> VoltageState:
        return distflow_solve(grid, orientation, scenario, self.opts or self.solver_options())


class AcOracleMethod(_IterativeMethod):

    def solve(self, grid: RadialGrid, orientation: Orientation, scenario: Scenario) -> VoltageState:
        return ac_oracle_solve(grid, orientation, scenario, self.opts or self.solver_options())
