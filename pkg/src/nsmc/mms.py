"""Manufactured solution for convergence studies.

Streamfunction psi = g(t) X(x) Y(y) with X = sin^2(kx x), Y = sin^2(ky y), so
the velocity (dpsi/dy, -dpsi/dx) is divergence free and vanishes on the walls.
The pressure is zero and the forcing is the residual of the momentum equation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .forward import SolverParams, solve_state
from .grid import Grid, GridSpec, VelocityField
from .measures import ControlTrajectory


@dataclass(frozen=True)
class TimeProfile:
    g: Callable[[float], float]
    dg: Callable[[float], float]


LINEAR = TimeProfile(lambda t: 1.0 + t, lambda t: 1.0)
OSCILLATING = TimeProfile(lambda t: 1.0 + np.sin(2.0 * np.pi * t), lambda t: 2.0 * np.pi * np.cos(2.0 * np.pi * t))


def _factors(s: np.ndarray, k: float):
    """sin^2(k s) and its first three derivatives."""
    return (
        np.sin(k * s) ** 2,
        k * np.sin(2 * k * s),
        2 * k**2 * np.cos(2 * k * s),
        -4 * k**3 * np.sin(2 * k * s),
    )


class Manufactured:
    def __init__(self, lx: float = 1.0, ly: float = 1.0, nu: float = 0.05, profile: TimeProfile = LINEAR):
        self.kx = np.pi / lx
        self.ky = np.pi / ly
        self.nu = nu
        self.profile = profile

    def streamfunction(self, x, y, t):
        return self.profile.g(t) * np.sin(self.kx * x) ** 2 * np.sin(self.ky * y) ** 2

    def velocity(self, x, y, t):
        X, X1, _, _ = _factors(x, self.kx)
        Y, Y1, _, _ = _factors(y, self.ky)
        g = self.profile.g(t)
        return g * X * Y1, -g * X1 * Y

    def forcing(self, x, y, t):
        X, X1, X2, X3 = _factors(x, self.kx)
        Y, Y1, Y2, Y3 = _factors(y, self.ky)
        g, dg, nu = self.profile.g(t), self.profile.dg(t), self.nu
        fx = dg * X * Y1 - nu * g * (X2 * Y1 + X * Y3) + g * g * X * X1 * (Y1 * Y1 - Y * Y2)
        fy = -dg * X1 * Y + nu * g * (X3 * Y + X1 * Y2) + g * g * Y * Y1 * (X1 * X1 - X * X2)
        return fx, fy

    # ------------------------------------------------------------- on a grid
    def face_velocity(self, grid: Grid, t: float) -> VelocityField:
        x1, y1 = grid.node_coords(1)
        x2, y2 = grid.node_coords(2)
        return VelocityField(self.velocity(x1, y1, t)[0], self.velocity(x2, y2, t)[1])

    def face_forcing(self, grid: Grid, t: float) -> VelocityField:
        x1, y1 = grid.node_coords(1)
        x2, y2 = grid.node_coords(2)
        return VelocityField(self.forcing(x1, y1, t)[0], self.forcing(x2, y2, t)[1])

    def discrete_initial(self, grid: Grid) -> VelocityField:
        """Curl of the sampled streamfunction: exactly divergence free on the grid."""
        xs = np.arange(1, grid.nx) * grid.hx
        ys = np.arange(1, grid.ny) * grid.hy
        psi = self.streamfunction(xs[:, None], ys[None, :], 0.0).ravel()
        return grid.unpack(grid.curl @ psi)

    def solve(self, grid: Grid, params: SolverParams):
        f0 = [self.face_forcing(grid, (n + 1) * params.dt) for n in range(params.nt)]
        y0 = self.discrete_initial(grid)
        return solve_state(grid, params, y0, f0, ControlTrajectory.zero(params.nt, params.dt))


def _l2(grid: Grid, a: np.ndarray) -> float:
    return float(np.sqrt(grid.cell_area * np.sum(a * a)))


def spatial_study(ns=(16, 32, 64), nu: float = 0.05, T: float = 0.5, nt: int = 8, profile: TimeProfile = LINEAR):
    """Final-time L2 velocity error per grid. The linear time profile is
    integrated exactly by backward Euler, so only spatial error remains."""
    rows = []
    for n in ns:
        g = Grid(GridSpec(n, n))
        m = Manufactured(nu=nu, profile=profile)
        p = SolverParams(nu=nu, T=T, nt=nt)
        traj = m.solve(g, p)
        err = traj.vel[-1] - g.pack(m.face_velocity(g, T))
        rows.append((n, nt, _l2(g, err)))
    return rows


def temporal_study(nts=(32, 64, 128), n: int = 32, nu: float = 0.05, T: float = 0.5, profile: TimeProfile = OSCILLATING):
    """Richardson-type differences between successive time refinements on one grid.

    Returns rows (nt, ||y_nt(T) - y_2nt(T)||) for all but the finest nt.
    """
    g = Grid(GridSpec(n, n))
    m = Manufactured(nu=nu, profile=profile)
    finals = [m.solve(g, SolverParams(nu=nu, T=T, nt=k)).vel[-1] for k in nts]
    return [(nts[i], _l2(g, finals[i] - finals[i + 1])) for i in range(len(nts) - 1)]


def observed_orders(errors) -> list[float]:
    e = np.asarray(errors, dtype=float)
    return list(np.log2(e[:-1] / e[1:]))
