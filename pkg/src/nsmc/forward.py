"""Controlled Navier-Stokes time stepping with measure forcing.

Each step is backward Euler in time for the viscous and convective terms:

    (y1 - y0)/dt - nu*L y1 + N(y1, y1) + G p1 = F,    D y1 = 0,

solved by Picard sweeps that lag the convection term, so every sweep is one
solve with the same prefactorized Stokes operator (in streamfunction form).
Steps where Picard contracts slowly finish with Newton sweeps. ``F`` is the sum of
the background forcing and the spread atoms of the control on (t_n, t_{n+1}].
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid, PressureField, VelocityField
from .measures import ControlTrajectory, forcing_from_measure


# Picard contraction factor above which a step falls back to Newton sweeps
NEWTON_SWITCH = 0.5
# a sweep that stops decreasing within this factor of the tolerance has hit roundoff
STAGNATION_FACTOR = 100.0


class SolverError(RuntimeError):
    """Raised when a time step cannot be completed."""

    def __init__(self, message: str, step: int | None = None, residual: float | None = None):
        super().__init__(message)
        self.step = step
        self.residual = residual


@dataclass(frozen=True)
class SolverParams:
    nu: float
    T: float
    nt: int
    picard_max: int = 60
    picard_tol: float = 1e-12
    eps_div: float = 1e-10
    doc_p: float | None = None
    doc_q: float | None = None

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.nt < 2:
            raise ValueError("nt must be >= 2")
        if not self.picard_tol > 0:
            raise ValueError("picard_tol must be positive")
        if self.doc_p is not None:
            p = self.doc_p
            if not 4.0 / 3.0 <= p < 2.0:
                raise ValueError("doc_p must lie in [4/3, 2)")
            if self.doc_q is not None and not self.doc_q > 2 * p / (p - 1):
                raise ValueError("doc_q must exceed 2p/(p-1)")

    @property
    def dt(self) -> float:
        return self.T / self.nt


# ------------------------------------------------------------- step solvers
def step_operator(grid: Grid, params: SolverParams, extra=None) -> sp.csr_matrix:
    """Momentum operator I/dt - nu L (+ extra) on packed interior faces."""
    a = sp.identity(grid.nvel, format="csr") / params.dt - params.nu * grid.laplacian
    if extra is not None:
        a = a + extra
    return a.tocsr()


class StepSolver:
    """Solve ``A y + G p = b, D y = 0`` for a fixed momentum operator ``A``.

    The velocity is sought as ``y = curl(psi)``, which makes it exactly
    divergence free and reduces the system to ``curl^T A curl psi = curl^T b``.
    The same LU serves the transposed system used by the adjoint.
    """

    def __init__(self, grid: Grid, a: sp.spmatrix, a_psi: sp.spmatrix | None = None):
        self.grid = grid
        self.a = a
        if a_psi is None:
            a_psi = grid.curl_t @ a @ grid.curl
        self.lu = spla.splu(sp.csc_matrix(a_psi), permc_spec="MMD_AT_PLUS_A")

    def solve(self, b: np.ndarray) -> np.ndarray:
        g = self.grid
        return g.curl @ self.lu.solve(g.curl_t @ b)

    def solve_transposed(self, b: np.ndarray) -> np.ndarray:
        g = self.grid
        return g.curl @ self.lu.solve(g.curl_t @ b, trans="T")

    def pressure(self, y: np.ndarray, b: np.ndarray, transposed: bool = False) -> np.ndarray:
        """Zero-mean p with G p = b - A y (or A^T y), as a (nx, ny) array."""
        g = self.grid
        r = b - (self.a.T @ y if transposed else self.a @ y)
        return g.solve_poisson(g.div @ r).reshape(g.nx, g.ny)


class _StokesEntry:
    """Prefactorized Stokes step plus the constant parts of the Oseen operators."""

    def __init__(self, grid: Grid, params: SolverParams):
        a = step_operator(grid, params)
        self.grid = grid
        self.solver = StepSolver(grid, a)
        self.const = grid.jacobian_map.project(a)
        self.const_psi = grid.psi_jacobian_map.project(grid.curl_t @ a @ grid.curl)

    def oseen(self, y: np.ndarray) -> StepSolver:
        """Step solver for A + N'(y)."""
        g = self.grid
        return StepSolver(g, g.jacobian_map.matrix(y, self.const), g.psi_jacobian_map.matrix(y, self.const_psi))


_STOKES_CACHE: dict = {}


def _stokes_entry(grid: Grid, params: SolverParams) -> _StokesEntry:
    key = (id(grid), params.nu, params.dt)
    hit = _STOKES_CACHE.get(key)
    if hit is None or hit.grid is not grid:
        if len(_STOKES_CACHE) > 16:
            _STOKES_CACHE.clear()
        hit = _STOKES_CACHE[key] = _StokesEntry(grid, params)
    return hit


def stokes_solver(grid: Grid, params: SolverParams) -> StepSolver:
    return _stokes_entry(grid, params).solver


# ---------------------------------------------------------------- trajectory
@dataclass(eq=False)
class StateTrajectory:
    """Velocity (packed interior faces) and pressure at t_n = n*dt, n = 0..nt."""

    grid: Grid
    params: SolverParams
    vel: np.ndarray  # (nt+1, nvel)
    pres: np.ndarray  # (nt+1, nx, ny)
    picard_sweeps: np.ndarray = field(default=None)

    @property
    def nt(self) -> int:
        return self.vel.shape[0] - 1

    def velocity(self, n: int) -> VelocityField:
        return self.grid.unpack(self.vel[n])

    def pressure(self, n: int) -> PressureField:
        return PressureField(self.pres[n].copy())

    @property
    def snapshots(self) -> list[tuple[VelocityField, PressureField]]:
        return [(self.velocity(n), self.pressure(n)) for n in range(self.nt + 1)]

    def full_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(nt+1, nx+1, ny) and (nt+1, nx, ny+1) face arrays including walls."""
        g = self.grid
        ux = np.zeros((self.nt + 1,) + g.shape1)
        uy = np.zeros((self.nt + 1,) + g.shape2)
        ux[:, 1:-1, :] = self.vel[:, : g.n1].reshape(-1, g.nx - 1, g.ny)
        uy[:, :, 1:-1] = self.vel[:, g.n1 :].reshape(-1, g.nx, g.ny - 1)
        return ux, uy

    @cached_property
    def oseen(self) -> "OseenSteps":
        return OseenSteps(self)


class OseenSteps:
    """Per-step LU of the Navier-Stokes step linearized about a base trajectory.

    Step n maps (z_n, forcing) to z_{n+1} through
    ``(I/dt - nu L + N'(y_{n+1})) z_{n+1} + G q = z_n/dt + forcing``.
    Factorizations are built lazily and shared by the linearized,
    second-order and adjoint marches.
    """

    def __init__(self, base: StateTrajectory):
        # keep only what is needed, so no reference cycle pins the factorizations
        self.grid = base.grid
        self.params = base.params
        self.vel = base.vel
        self._lus: dict[int, StepSolver] = {}

    def step(self, n: int) -> StepSolver:
        lu = self._lus.get(n)
        if lu is None:
            entry = _stokes_entry(self.grid, self.params)
            lu = self._lus[n] = entry.oseen(self.vel[n + 1])
        return lu


# ------------------------------------------------------------------ forcing
def as_forcing_series(grid: Grid, f0, nt: int) -> list[np.ndarray] | None:
    """Normalize background forcing to a list of nt packed interior vectors."""
    if f0 is None or (hasattr(f0, "__len__") and len(f0) == 0):
        return None
    out = []
    for item in f0:
        if isinstance(item, VelocityField):
            out.append(grid.pack_forcing(item.ux, item.uy))
        else:
            arr = np.asarray(item, dtype=float)
            if arr.shape != (grid.nvel,):
                raise ValueError(f"forcing vector has shape {arr.shape}, expected ({grid.nvel},)")
            out.append(arr)
    if len(out) != nt:
        raise ValueError(f"f0 has {len(out)} entries, expected nt={nt}")
    return out


def control_forcing(grid: Grid, u: ControlTrajectory) -> list[np.ndarray]:
    return [forcing_from_measure(grid, m) for m in u.values]


# --------------------------------------------------------------------- solve
def solve_state(
    grid: Grid,
    params: SolverParams,
    y0: VelocityField | None,
    f0,
    u: ControlTrajectory,
) -> StateTrajectory:
    if u.nt != params.nt:
        raise ValueError(f"control has {u.nt} steps, params.nt={params.nt}")
    nt, dt = params.nt, params.dt
    if y0 is None:
        y0 = grid.zero_velocity()
    if np.max(np.abs(grid.divergence(y0))) > params.eps_div:
        y0 = grid.project(y0)
    f0s = as_forcing_series(grid, f0, nt)
    entry = _stokes_entry(grid, params)
    stokes = entry.solver

    vel = np.zeros((nt + 1, grid.nvel))
    pres = np.zeros((nt + 1, grid.nx, grid.ny))
    sweeps = np.zeros(nt, dtype=int)
    vel[0] = grid.pack(y0)
    h = min(grid.hx, grid.hy)
    cfl_warned = False
    for n in range(nt):
        forcing = forcing_from_measure(grid, u.values[n])
        if f0s is not None:
            forcing = forcing + f0s[n]
        rhs0 = vel[n] / dt + forcing
        y_prev = vel[n]
        # linear extrapolation as the first Picard iterate
        yk = 2.0 * vel[n] - vel[n - 1] if n >= 1 else vel[n]
        res_old = np.inf
        newton = False
        for k in range(1, params.picard_max + 1):
            if newton:
                # Newton: (A + N'(yk)) y = rhs0 + N(yk, yk)
                y_new = entry.oseen(yk).solve(rhs0 + grid.convect(yk, yk))
            else:
                y_new = stokes.solve(rhs0 - grid.convect(yk, yk))
            if not np.all(np.isfinite(y_new)):
                raise SolverError(f"non-finite velocity at step {n}", step=n)
            scale = max(np.linalg.norm(y_new), np.linalg.norm(y_prev))
            res = np.linalg.norm(y_new - yk) / scale if scale > 0 else 0.0
            yk = y_new
            if res <= params.picard_tol:
                break
            if k >= 3 and res >= res_old and res <= STAGNATION_FACTOR * params.picard_tol:
                break
            # slow or stalled contraction: switch to Newton for the rest of the step
            if k >= 3 and res > NEWTON_SWITCH * res_old:
                newton = True
            res_old = res
        else:
            raise SolverError(
                f"Picard iteration did not converge at step {n}: residual {res:.3e} after "
                f"{params.picard_max} sweeps",
                step=n,
                residual=res,
            )
        p_new = stokes.pressure(yk, rhs0 - grid.convect(yk, yk))
        vel[n + 1] = yk
        pres[n + 1] = p_new
        sweeps[n] = k
        if not cfl_warned:
            cfl = np.max(np.abs(yk)) * dt / h if yk.size else 0.0
            if cfl > 1.0:
                warnings.warn(f"CFL number {cfl:.2f} > 1 at step {n}", RuntimeWarning, stacklevel=2)
                cfl_warned = True
    return StateTrajectory(grid, params, vel, pres, sweeps)


def kinetic_energy_trace(traj: StateTrajectory) -> np.ndarray:
    """1/2 ||y(t_n)||^2 per snapshot."""
    return 0.5 * traj.grid.cell_area * np.sum(traj.vel**2, axis=1)


def l2q_norm(grid: Grid, params: SolverParams, vel_series: np.ndarray) -> float:
    """L2(Q) norm of a packed velocity series with trapezoidal time weights."""
    w = trapezoid_weights(vel_series.shape[0] - 1)
    return float(np.sqrt(params.dt * grid.cell_area * np.sum(w * np.sum(vel_series**2, axis=1))))


def trapezoid_weights(nt: int) -> np.ndarray:
    w = np.ones(nt + 1)
    w[0] = w[-1] = 0.5
    return w
