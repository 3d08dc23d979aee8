"""
Analytical voltage solvers for radial grids.

- LinDistFlow: one lossless forward pass, used both as a feature baseline and
  as a standalone solver.
- DistFlow: fixed-point iteration of the nonlinear branch-flow equations,
  angles recovered with the small-angle linearization.
- AC oracle: complex forward-backward sweep, exact up to its tolerance; it
  labels the training data.

DistFlow works with load quantities (P_L = -p_inj); conversion from the net
injection convention happens at the top of distflow_solve.
"""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from errors import BadConfig, DimensionMismatch, NonConvergence
from grid_model import RadialGrid, Scenario, VoltageState
from path_engine import Aggregates, Orientation, aggregate_downstream

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LdfStepInput:
    v_parent: float
    theta_parent: float
    r: float
    x: float
    p_agg: float
    q_agg: float
    v0: float = 1.0

    def __post_init__(self):
        if not self.v0 > 0:
            raise BadConfig(f"v0 must be positive, got {self.v0}")


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-10
    max_iter: int = 100

    def __post_init__(self):
        if not self.tol > 0:
            raise BadConfig(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise BadConfig(f"max_iter must be at least 1, got {self.max_iter}")


def linear_angle_drop(r, x, p, q, v_nom):
    """Angle increment in degrees for the flow (p, q) over branch r + jx"""
    return np.degrees((x * p - r * q) / v_nom**2)


def ldf_voltage(v_parent, theta_parent, r, x, p_agg, q_agg, v0):
    """
    LinDistFlow child voltage from its parent; scalars or arrays.

    v = v_parent - (r p + x q) / v0, theta = theta_parent - deg((x p - r q) / v0^2)
    """
    v_ldf = v_parent - (r * p_agg + x * q_agg) / v0
    theta_ldf = theta_parent - linear_angle_drop(r, x, p_agg, q_agg, v0)
    return v_ldf, theta_ldf


def lindistflow_step(step: LdfStepInput) -> Tuple[float, float]:
    v_ldf, theta_ldf = ldf_voltage(step.v_parent, step.theta_parent, step.r, step.x, step.p_agg, step.q_agg, step.v0)
    return float(v_ldf), float(theta_ldf)


def lindistflow_solve(grid: RadialGrid, orientation: Orientation, scenario: Scenario) -> VoltageState:
    aggregates = aggregate_downstream(grid, orientation, scenario)
    vm = np.empty(grid.n_buses)
    va = np.empty(grid.n_buses)
    vm[orientation.slack_id] = scenario.slack_vm
    va[orientation.slack_id] = scenario.slack_va

    for bus in orientation.bfs_order[1:]:
        parent = orientation.parent[bus]
        vm[bus], va[bus] = lindistflow_step(
            LdfStepInput(
                v_parent=vm[parent],
                theta_parent=va[parent],
                r=orientation.branch_r[bus],
                x=orientation.branch_x[bus],
                p_agg=aggregates.p_agg[bus],
                q_agg=aggregates.q_agg[bus],
                v0=scenario.slack_vm,
            )
        )
    return VoltageState(vm, va)


def teacher_forced_ldf(orientation: Orientation, truth: VoltageState, aggregates: Aggregates, v0: float) -> VoltageState:
    """
    LinDistFlow baseline of every bus computed from its true parent voltage.

    The slack entry keeps the true slack voltage.
    """
    parents = orientation.parent_array()
    parents[orientation.slack_id] = orientation.slack_id
    vm, va = ldf_voltage(
        truth.vm[parents],
        truth.va[parents],
        orientation.branch_r,
        orientation.branch_x,
        aggregates.p_agg,
        aggregates.q_agg,
        v0,
    )
    vm[orientation.slack_id] = truth.vm[orientation.slack_id]
    va[orientation.slack_id] = truth.va[orientation.slack_id]
    return VoltageState(vm, va)


def _check_sizes(grid: RadialGrid, orientation: Orientation, scenario: Scenario) -> None:
    if scenario.n_buses != grid.n_buses or orientation.n_buses != grid.n_buses:
        message = f"Scenario has {scenario.n_buses} buses, grid has {grid.n_buses}, orientation covers {orientation.n_buses}"
        logger.error(message)
        raise DimensionMismatch(message)


def _branch_flows(
    orientation: Orientation, p_load: np.ndarray, q_load: np.ndarray, vm: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Backward sweep: flow (P_ij, Q_ij) on the branch into every bus j.

    P_ij = P_j + sum over children k of (P_jk + r_jk (P_jk^2 + Q_jk^2) / V_j^2),
    Q_ij likewise with x_jk. A branch's own loss is charged to its parent branch.
    """
    p_flow = p_load.copy()
    q_flow = q_load.copy()
    for bus in reversed(orientation.bfs_order[1:]):
        parent = orientation.parent[bus]
        loss_sq = (p_flow[bus] ** 2 + q_flow[bus] ** 2) / vm[parent] ** 2
        p_flow[parent] += p_flow[bus] + orientation.branch_r[bus] * loss_sq
        q_flow[parent] += q_flow[bus] + orientation.branch_x[bus] * loss_sq
    return p_flow, q_flow


def _distflow_voltage(orientation: Orientation, slack_vm: float, p_flow: np.ndarray, q_flow: np.ndarray) -> np.ndarray:
    """Forward sweep of V_j^2 = V_i^2 - 2(rP + xQ) + (r^2 + x^2)(P^2 + Q^2) / V_i^2"""
    vm = np.empty_like(p_flow)
    vm[orientation.slack_id] = slack_vm
    for bus in orientation.bfs_order[1:]:
        parent = orientation.parent[bus]
        r = orientation.branch_r[bus]
        x = orientation.branch_x[bus]
        v_parent_sq = vm[parent] ** 2
        v_sq = (
            v_parent_sq
            - 2.0 * (r * p_flow[bus] + x * q_flow[bus])
            + (r**2 + x**2) * (p_flow[bus] ** 2 + q_flow[bus] ** 2) / v_parent_sq
        )
        if v_sq <= 0:
            raise NonConvergence(f"DistFlow voltage collapsed at bus {bus} (V^2 = {v_sq:.3e})")
        vm[bus] = np.sqrt(v_sq)
    return vm


def _recover_angles(orientation: Orientation, scenario: Scenario, p_flow: np.ndarray, q_flow: np.ndarray) -> np.ndarray:
    va = np.empty_like(p_flow)
    va[orientation.slack_id] = scenario.slack_va
    for bus in orientation.bfs_order[1:]:
        parent = orientation.parent[bus]
        va[bus] = va[parent] - linear_angle_drop(
            orientation.branch_r[bus], orientation.branch_x[bus], p_flow[bus], q_flow[bus], scenario.slack_vm
        )
    return va


def distflow_solve(
    grid: RadialGrid, orientation: Orientation, scenario: Scenario, opts: SolverOptions = SolverOptions()
) -> VoltageState:
    _check_sizes(grid, orientation, scenario)
    p_load = -np.array(scenario.p_inj, dtype=float)
    q_load = -np.array(scenario.q_inj, dtype=float)
    p_load[orientation.slack_id] = 0.0
    q_load[orientation.slack_id] = 0.0

    vm = np.full(grid.n_buses, scenario.slack_vm)
    delta = np.inf
    for iteration in range(1, opts.max_iter + 1):
        p_flow, q_flow = _branch_flows(orientation, p_load, q_load, vm)
        try:
            vm_next = _distflow_voltage(orientation, scenario.slack_vm, p_flow, q_flow)
        except NonConvergence as e:
            raise NonConvergence(str(e), state=VoltageState.flat(grid.n_buses, scenario.slack_vm), iterations=iteration) from e
        delta = float(np.max(np.abs(vm_next - vm)))
        vm = vm_next
        if delta < opts.tol:
            logger.debug(f"DistFlow converged in {iteration} iterations (max dV {delta:.2e})")
            p_flow, q_flow = _branch_flows(orientation, p_load, q_load, vm)
            return VoltageState(vm, _recover_angles(orientation, scenario, p_flow, q_flow))

    state = VoltageState(vm, _recover_angles(orientation, scenario, p_flow, q_flow))
    logger.error(f"DistFlow did not converge in {opts.max_iter} iterations (max dV {delta:.2e})")
    raise NonConvergence(
        f"DistFlow did not converge in {opts.max_iter} iterations (max dV {delta:.2e})",
        state=state,
        residual=delta,
        iterations=opts.max_iter,
    )


def distflow_residual(grid: RadialGrid, orientation: Orientation, scenario: Scenario, state: VoltageState) -> float:
    """Max |V_j - V_j(recomputed)| after one more backward and forward sweep at state"""
    p_load = -np.array(scenario.p_inj, dtype=float)
    q_load = -np.array(scenario.q_inj, dtype=float)
    p_load[orientation.slack_id] = 0.0
    q_load[orientation.slack_id] = 0.0
    p_flow, q_flow = _branch_flows(orientation, p_load, q_load, np.asarray(state.vm))
    vm = _distflow_voltage(orientation, scenario.slack_vm, p_flow, q_flow)
    return float(np.max(np.abs(vm - state.vm)))


def _state_from_complex(voltage: np.ndarray, orientation: Orientation, scenario: Scenario) -> VoltageState:
    vm = np.abs(voltage)
    va = np.degrees(np.angle(voltage))
    vm[orientation.slack_id] = scenario.slack_vm
    va[orientation.slack_id] = scenario.slack_va
    return VoltageState(vm, va)


def ac_oracle_solve(
    grid: RadialGrid, orientation: Orientation, scenario: Scenario, opts: SolverOptions = SolverOptions()
) -> VoltageState:
    """
    Exact AC forward-backward sweep on complex voltages.

    Backward: I_branch,j = -conj(S_j / V_j) + sum of child branch currents.
    Forward: V_j = V_parent - z_j I_branch,j.
    """
    _check_sizes(grid, orientation, scenario)
    s_inj = np.array(scenario.p_inj, dtype=float) + 1j * np.array(scenario.q_inj, dtype=float)
    s_inj[orientation.slack_id] = 0.0
    z = orientation.branch_r + 1j * orientation.branch_x
    v_slack = scenario.slack_vm * np.exp(1j * np.radians(scenario.slack_va))

    voltage = np.full(grid.n_buses, v_slack, dtype=complex)
    backward = orientation.bfs_order[:0:-1]
    forward = orientation.bfs_order[1:]
    parent = orientation.parent
    delta = np.inf

    for iteration in range(1, opts.max_iter + 1):
        current = -np.conj(s_inj / voltage)
        for bus in backward:
            current[parent[bus]] += current[bus]

        previous = voltage.copy()
        for bus in forward:
            voltage[bus] = voltage[parent[bus]] - z[bus] * current[bus]

        delta = float(np.max(np.abs(voltage - previous)))
        if not np.isfinite(delta):
            break
        if delta < opts.tol:
            logger.debug(f"AC sweep converged in {iteration} iterations (max dV {delta:.2e})")
            return _state_from_complex(voltage, orientation, scenario)

    state = _state_from_complex(voltage, orientation, scenario) if np.all(np.isfinite(voltage)) else None
    logger.error(f"AC sweep did not converge in {opts.max_iter} iterations (max dV {delta:.2e})")
    raise NonConvergence(
        f"AC forward-backward sweep did not converge in {opts.max_iter} iterations (max dV {delta:.2e})",
        state=state,
        residual=delta,
        iterations=opts.max_iter,
    )
