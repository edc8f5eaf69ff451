"""Discrete adjoint of the linearized forward march.

With ``w_n`` the trapezoidal time weights and ``T_n`` the solution operator of
linearized step n, the adjoint marches backward from ``phi_nt = 0``:

    phi_{n-1} = T_{n-1}^T (phi_n / dt + w_n (y_n - yd_n)).

Scaled this way, ``phi_n`` pairs with the control on (t_n, t_{n+1}]: the
derivative of the tracking cost is ``sum_n dt <v_n, phi_n>``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .forward import StateTrajectory, trapezoid_weights
from .grid import Grid, PressureField, VelocityField


@dataclass(eq=False)
class AdjointTrajectory:
    grid: Grid
    vel: np.ndarray  # (nt+1, nvel), vel[nt] == 0
    pres: np.ndarray  # (nt+1, nx, ny)
    psi: np.ndarray  # (nt+1, 2): sup over omega of |phi_i(t_n)|
    argmax: np.ndarray  # (nt+1, 2, 2): node index (i, j) of that sup
    dt: float

    @property
    def nt(self) -> int:
        return self.vel.shape[0] - 1

    def velocity(self, n: int) -> VelocityField:
        return self.grid.unpack(self.vel[n])

    def pressure(self, n: int) -> PressureField:
        return PressureField(self.pres[n].copy())

    @property
    def snapshots(self):
        return [(self.velocity(n), self.pressure(n)) for n in range(self.nt + 1)]


def residual_series(grid: Grid, base: StateTrajectory, yd) -> np.ndarray:
    """Packed interior y_n - yd_n for n = 0..nt."""
    return base.vel - desired_packed(grid, yd, base.nt)


def desired_packed(grid: Grid, yd, nt: int) -> np.ndarray:
    """Accept ``None`` (zero), a packed (nt+1, nvel) array, or a pair of
    full face arrays ``(ydx, ydy)`` with a leading time axis."""
    if yd is None:
        return np.zeros((nt + 1, grid.nvel))
    if isinstance(yd, tuple):
        ydx, ydy = yd
        if ydx.shape != (nt + 1,) + grid.shape1 or ydy.shape != (nt + 1,) + grid.shape2:
            raise ValueError("target arrays do not match the grid/time mesh")
        return np.concatenate(
            [ydx[:, 1:-1, :].reshape(nt + 1, -1), ydy[:, :, 1:-1].reshape(nt + 1, -1)], axis=1
        )
    arr = np.asarray(yd, dtype=float)
    if arr.shape != (nt + 1, grid.nvel):
        raise ValueError(f"target has shape {arr.shape}, expected {(nt + 1, grid.nvel)}")
    return arr


def adjoint_march(base: StateTrajectory, sources: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Backward march with ``sources[n]`` (n = 1..nt) entering at step n-1."""
    g, dt, nt = base.grid, base.params.dt, base.nt
    vel = np.zeros((nt + 1, g.nvel))
    pres = np.zeros((nt + 1, g.nx, g.ny))
    for n in range(nt, 0, -1):
        rhs = vel[n] / dt + sources[n]
        step = base.oseen.step(n - 1)
        vel[n - 1] = step.solve_transposed(rhs)
        pres[n - 1] = step.pressure(vel[n - 1], rhs, transposed=True)
    return vel, pres


def sup_norm_on_omega(adj: AdjointTrajectory, n: int, i: int):
    """(max over omega nodes of |phi_i(t_n)|, argmax node (i, j)); first node wins ties."""
    g = adj.grid
    field = adj.velocity(n).component(i)
    value, a, b = kernels.absmax_masked(field, g.omega_mask(i))
    return value, (a, b)


def _sup_table(grid: Grid, vel: np.ndarray):
    nt = vel.shape[0] - 1
    psi = np.zeros((nt + 1, 2))
    arg = np.zeros((nt + 1, 2, 2), dtype=int)
    for n in range(nt + 1):
        f = grid.unpack(vel[n])
        for c in (1, 2):
            value, a, b = kernels.absmax_masked(f.component(c), grid.omega_mask(c))
            psi[n, c - 1] = value
            arg[n, c - 1] = (a, b)
    return psi, arg


def solve_adjoint(grid: Grid, params, base: StateTrajectory, y_d) -> AdjointTrajectory:
    if base.grid is not grid or base.params != params:
        raise ValueError("base trajectory was computed on a different grid or with different parameters")
    w = trapezoid_weights(base.nt)
    sources = w[:, None] * residual_series(grid, base, y_d)
    vel, pres = adjoint_march(base, sources)
    psi, arg = _sup_table(grid, vel)
    return AdjointTrajectory(grid, vel, pres, psi, arg, params.dt)
