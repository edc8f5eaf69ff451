"""Conditional gradient (Frank-Wolfe) method on the TV ball of radius gamma."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .adjoint import AdjointTrajectory
from .forward import SolverParams
from .grid import Grid
from .measures import ControlTrajectory, ScalarAtomicMeasure, VectorAtomicMeasure, EMPTY, axpy
from .objective import EvalRecord, ProblemData, curvature_form, directional_derivative, eval_J

log = logging.getLogger(__name__)

LOG_HEADER = ["iter", "J", "gap", "step", "atoms_c1", "atoms_c2", "seconds"]


class InfeasibleStart(ValueError):
    pass


@dataclass(frozen=True)
class CgmConfig:
    gamma: float
    max_iter: int = 200
    step_rule: str = "armijo"  # or "harmonic"
    armijo_c: float = 1e-4
    armijo_shrink: float = 0.5
    armijo_min_step: float = 1e-12
    model_step: bool = True  # first Armijo trial from the quadratic model
    stop_tol: float = 1e-10
    prune_tol: float = 1e-12
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.step_rule not in ("armijo", "harmonic"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if not 0 < self.armijo_shrink < 1 or not 0 < self.armijo_c < 1:
            raise ValueError("Armijo constants must lie in (0, 1)")
        if self.max_iter < 0:
            raise ValueError("max_iter must be non-negative")


@dataclass
class IterateRecord:
    iter: int
    J: float
    gap: float
    step: float
    atoms: np.ndarray  # (nt, 2) atom counts per step
    seconds: float

    def row(self) -> list:
        a = self.atoms
        c1 = int(a[:, 0].max()) if a.size else 0
        c2 = int(a[:, 1].max()) if a.size else 0
        return [self.iter, f"{self.J:.17g}", f"{self.gap:.17g}", f"{self.step:.17g}", c1, c2, f"{self.seconds:.6f}"]


@dataclass
class IterateLog:
    records: list[IterateRecord] = field(default_factory=list)

    def append(self, rec: IterateRecord) -> None:
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def J(self) -> np.ndarray:
        return np.array([r.J for r in self.records])

    @property
    def gaps(self) -> np.ndarray:
        return np.array([r.gap for r in self.records])

    def write_csv(self, path) -> None:
        """Atom columns hold the largest per-step count of each component."""
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(LOG_HEADER)
            for r in self.records:
                wr.writerow(r.row())


@dataclass(eq=False)
class OptimizeResult:
    u: ControlTrajectory
    record: EvalRecord
    log: IterateLog
    converged: bool
    message: str


def lmo(adj: AdjointTrajectory, gamma: float) -> ControlTrajectory:
    """Minimize sum_n dt <v_n, phi_n> over the TV ball: one atom per step and
    component at the sup of |phi_i| on omega, weight -gamma*sign(phi_i)."""
    g = adj.grid
    vals = []
    for n in range(adj.nt):
        comps = []
        f = None
        for i in (1, 2):
            if gamma == 0.0 or adj.psi[n, i - 1] == 0.0:
                comps.append(EMPTY)
                continue
            if f is None:
                f = adj.velocity(n)
            a, b = adj.argmax[n, i - 1]
            val = f.component(i)[a, b]
            pos = g.node_position(i, a, b)
            comps.append(ScalarAtomicMeasure.from_atoms([pos], [-gamma * np.sign(val)]))
        vals.append(VectorAtomicMeasure(*comps))
    return ControlTrajectory(tuple(vals), adj.dt)


def fw_gap(record: EvalRecord, u: ControlTrajectory, v: ControlTrajectory) -> float:
    """J'(u)(u - v): zero iff v attains the linear minimum at u."""
    d = axpy(-1.0, v, u, eps=0.0)
    return directional_derivative(record, d)


def _convex_step(u: ControlTrajectory, v: ControlTrajectory, s: float, prune: float) -> ControlTrajectory:
    if s == 1.0:
        return axpy(1.0, v, ControlTrajectory.zero(u.nt, u.dt), eps=prune)
    return axpy(s, v, u.scaled(1.0 - s), eps=prune)


def optimize(
    grid: Grid,
    params: SolverParams,
    problem: ProblemData,
    u0: ControlTrajectory,
    config: CgmConfig,
    checkpoint: Callable[[int, ControlTrajectory, IterateLog], None] | None = None,
) -> OptimizeResult:
    gamma = config.gamma
    if not u0.feasible(gamma):
        raise InfeasibleStart(f"initial control violates ||u(t)|| <= gamma={gamma} (max {u0.norms().max():.3e})")
    t0 = time.perf_counter()
    itlog = IterateLog()
    u = u0
    rec = eval_J(grid, params, problem, u)
    prune = config.prune_tol * gamma
    converged, message = False, "max_iter reached"
    step = 0.0
    for k in range(config.max_iter + 1):
        v = lmo(rec.adjoint, gamma)
        gap = fw_gap(rec, u, v)
        itlog.append(IterateRecord(k, rec.j_value, gap, step, u.atom_counts(), time.perf_counter() - t0))
        log.info("iter %d  J=%.12e  gap=%.3e  step=%.3g", k, rec.j_value, gap, step)
        if config.checkpoint_every and checkpoint is not None and k % config.checkpoint_every == 0:
            checkpoint(k, u, itlog)
        if gap <= config.stop_tol * (1.0 + abs(rec.j_value)):
            converged, message = True, "gap below tolerance"
            break
        if k == config.max_iter:
            break
        if config.step_rule == "harmonic":
            step = 2.0 / (k + 2.0)
            u = _convex_step(u, v, step, prune)
            rec = eval_J(grid, params, problem, u)
            continue
        step = 1.0
        if config.model_step:
            curv = curvature_form(grid, params, rec, axpy(-1.0, u, v, eps=0.0))
            if curv > 0.0:
                s_model = gap / curv
                # the model certifies sufficient decrease on [0, 2(1-c) s_model];
                # take the full step whenever it lies in there
                step = 1.0 if s_model >= 0.5 / (1.0 - config.armijo_c) else s_model
        while True:
            trial = _convex_step(u, v, step, prune)
            trec = eval_J(grid, params, problem, trial)
            if trec.j_value <= rec.j_value - config.armijo_c * step * gap:
                break
            step *= config.armijo_shrink
            if step < config.armijo_min_step:
                trec = None
                break
        if trec is None:
            converged, message = False, "line search failed"
            break
        u, rec = trial, trec
    return OptimizeResult(u, rec, itlog, converged, message)
