"""Tracking cost, its derivatives and the Lagrangian derivative at a control."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .adjoint import AdjointTrajectory, desired_packed, solve_adjoint
from .forward import SolverParams, StateTrajectory, as_forcing_series, solve_state, trapezoid_weights
from .grid import Grid, VelocityField, interpolate_field
from .linearized import solve_linearized, solve_second
from .measures import ControlTrajectory, lebesgue_decompose, pairing

# Sign of the cross term 2 <(z.grad) phi, z> in the curvature form; pinned
# against the second difference of J in tests/test_objective.py.
CROSS_TERM_SIGN = 1.0


@dataclass(eq=False)
class ProblemData:
    """Initial state, background forcing and target on the time mesh."""

    y0: VelocityField | None
    f0: list | None
    yd: np.ndarray  # packed interior target, (nt+1, nvel)
    yd_wall: float = 0.0  # cost contribution of target values on wall faces

    @classmethod
    def build(cls, grid: Grid, params: SolverParams, y0=None, f0=None, yd=None) -> "ProblemData":
        nt = params.nt
        wall = 0.0
        if isinstance(yd, tuple):
            wall = _wall_cost(grid, params, *yd)
        packed = desired_packed(grid, yd, nt)
        return cls(y0, as_forcing_series(grid, f0, nt), packed, wall)


def _wall_cost(grid: Grid, params: SolverParams, ydx: np.ndarray, ydy: np.ndarray) -> float:
    # wall-normal faces carry half a cell of quadrature weight; y vanishes there
    w = trapezoid_weights(params.nt)
    s = 0.5 * (np.sum(ydx[:, 0, :] ** 2 + ydx[:, -1, :] ** 2, axis=1) + np.sum(ydy[:, :, 0] ** 2 + ydy[:, :, -1] ** 2, axis=1))
    return 0.5 * params.dt * grid.cell_area * float(np.dot(w, s))


@dataclass(eq=False)
class EvalRecord:
    grid: Grid
    params: SolverParams
    problem: ProblemData
    u: ControlTrajectory
    state: StateTrajectory
    j_value: float

    @cached_property
    def adjoint(self) -> AdjointTrajectory:
        return solve_adjoint(self.grid, self.params, self.state, self.problem.yd)

    def grad_pairing(self, v: ControlTrajectory) -> float:
        return directional_derivative(self, v)


def tracking_cost(grid: Grid, params: SolverParams, state: StateTrajectory, problem: ProblemData) -> float:
    r = state.vel - problem.yd
    w = trapezoid_weights(state.nt)
    interior = 0.5 * params.dt * grid.cell_area * float(np.dot(w, np.sum(r * r, axis=1)))
    return interior + problem.yd_wall


def eval_J(grid: Grid, params: SolverParams, problem: ProblemData, u: ControlTrajectory) -> EvalRecord:
    state = solve_state(grid, params, problem.y0, problem.f0, u)
    return EvalRecord(grid, params, problem, u, state, tracking_cost(grid, params, state, problem))


def directional_derivative(record: EvalRecord, v: ControlTrajectory) -> float:
    """sum_n dt <v(t_n), phi(t_n)> with phi evaluated at the atoms of v."""
    adj = record.adjoint
    total = 0.0
    for n, m in enumerate(v.values):
        if m.comp1.natoms or m.comp2.natoms:
            total += pairing(record.grid, m, adj.velocity(n))
    return record.params.dt * total


def curvature_form(grid: Grid, params: SolverParams, record: EvalRecord, v: ControlTrajectory) -> float:
    """Second derivative of J at record.u in direction v, from z_v and phi."""
    z = solve_linearized(grid, params, record.state, v)
    return _curvature_from(grid, params, record, z, z)


def _curvature_from(grid, params, record, z1: StateTrajectory, z2: StateTrajectory) -> float:
    w = trapezoid_weights(z1.nt)
    quad = float(np.dot(w, np.sum(z1.vel * z2.vel, axis=1)))
    phi = record.adjoint.vel
    cross = 0.0
    for n in range(z1.nt):
        a, b = z1.vel[n + 1], z2.vel[n + 1]
        # symmetrized <(z1.grad) phi, z2>
        cross += 0.5 * (np.dot(grid.convect(a, phi[n]), b) + np.dot(grid.convect(b, phi[n]), a))
    return params.dt * grid.cell_area * (quad + CROSS_TERM_SIGN * 2.0 * cross)


def curvature_bilinear(grid, params, record: EvalRecord, v1: ControlTrajectory, v2: ControlTrajectory) -> float:
    z1 = solve_linearized(grid, params, record.state, v1)
    z2 = solve_linearized(grid, params, record.state, v2)
    return _curvature_from(grid, params, record, z1, z2)


def curvature_second_order(grid, params, record: EvalRecord, v1: ControlTrajectory, v2: ControlTrajectory) -> float:
    """J''(u)(v1, v2) = <z1, z2> + <y - yd, z12> with z12 from the second-order system."""
    z1 = solve_linearized(grid, params, record.state, v1)
    z2 = z1 if v2 is v1 else solve_linearized(grid, params, record.state, v2)
    z12 = solve_second(grid, params, record.state, z1, z2)
    w = trapezoid_weights(z1.nt)
    r = record.state.vel - record.problem.yd
    quad = float(np.dot(w, np.sum(z1.vel * z2.vel, axis=1)))
    lin = float(np.dot(w, np.sum(r * z12.vel, axis=1)))
    return params.dt * grid.cell_area * (quad + lin)


def lagrangian_derivative(record: EvalRecord, u: ControlTrajectory, v: ControlTrajectory) -> float:
    """Reduced Lagrangian derivative: only the part of v singular to |u| counts,
    sum_i sum_n dt (<v_is, phi_i> + psi_i ||v_is||)."""
    adj = record.adjoint
    g = record.grid
    total = 0.0
    for n in range(v.nt):
        field = None
        for i in (1, 2):
            _, v_s = lebesgue_decompose(v.values[n].component(i), u.values[n].component(i))
            if v_s.natoms == 0:
                continue
            if field is None:
                field = adj.velocity(n)
            val = sum(w * interpolate_field(g, field, x, i) for x, w in v_s.atoms())
            total += val + adj.psi[n, i - 1] * v_s.tv()
    return record.params.dt * total
