"""First and second derivatives of the control-to-state map.

Both are marches of the forward step linearized about a base trajectory
(see :class:`nsmc.forward.OseenSteps`); only the right-hand sides differ:

* first derivative: the spread atoms of the direction ``v``;
* second derivative: ``-(N(z1, z2) + N(z2, z1))`` at the new time level.

Initial data are zero in both cases.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .forward import StateTrajectory, control_forcing
from .grid import Grid
from .measures import ControlTrajectory


def _check_base(grid: Grid, params, base: StateTrajectory):
    if base.grid is not grid or base.params != params:
        raise ValueError("base trajectory was computed on a different grid or with different parameters")


def linear_march(base: StateTrajectory, forcing: Callable[[int], np.ndarray | None]) -> StateTrajectory:
    """z_{n+1} from z_n through the linearized step with ``forcing(n)`` added."""
    g, params = base.grid, base.params
    nt, dt = base.nt, params.dt
    vel = np.zeros((nt + 1, g.nvel))
    pres = np.zeros((nt + 1, g.nx, g.ny))
    for n in range(nt):
        f = forcing(n)
        rhs = vel[n] / dt if f is None else vel[n] / dt + f
        step = base.oseen.step(n)
        vel[n + 1] = step.solve(rhs)
        pres[n + 1] = step.pressure(vel[n + 1], rhs)
    return StateTrajectory(g, params, vel, pres)


def solve_linearized(grid: Grid, params, base: StateTrajectory, v: ControlTrajectory) -> StateTrajectory:
    _check_base(grid, params, base)
    if v.nt != base.nt:
        raise ValueError(f"direction has {v.nt} steps, base has {base.nt}")
    forcing = control_forcing(grid, v)
    return linear_march(base, lambda n: forcing[n])


def solve_second(
    grid: Grid, params, base: StateTrajectory, z1: StateTrajectory, z2: StateTrajectory
) -> StateTrajectory:
    _check_base(grid, params, base)

    def forcing(n):
        a, b = z1.vel[n + 1], z2.vel[n + 1]
        return -(grid.convect(a, b) + grid.convect(b, a))

    return linear_march(base, forcing)
