"""First- and second-order optimality diagnostics for a computed control.

Everything here reports; nothing raises on a violated condition.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .adjoint import AdjointTrajectory
from .forward import l2q_norm
from .grid import interpolate_field
from .linearized import solve_linearized
from .measures import (
    ControlTrajectory,
    ScalarAtomicMeasure,
    VectorAtomicMeasure,
    axpy,
    forcing_from_measure,
    j_directional,
)
from .objective import EvalRecord, curvature_form, eval_J, lagrangian_derivative

TOL_PSI_REL = 1e-10
DEFAULT_TAU = 1e-2


def psi_threshold(adj: AdjointTrajectory) -> float:
    """Level below which phi_i(t_n) is treated as identically zero."""
    return TOL_PSI_REL * float(np.max(adj.psi, initial=0.0))


# ------------------------------------------------------------ first order
@dataclass
class OptimalityReport:
    gamma: float
    max_psi: float
    tol_psi: float
    norm_gap: np.ndarray  # (nt, 2), NaN where psi <= tol_psi
    support_residual: np.ndarray  # (nt, 2), 0 where the component is empty
    extra: dict = field(default_factory=dict)

    @property
    def max_norm_gap(self) -> float:
        g = self.norm_gap[np.isfinite(self.norm_gap)]
        return float(g.max()) if g.size else 0.0

    @property
    def max_support_residual(self) -> float:
        return float(self.support_residual.max(initial=0.0))

    @property
    def relative_support_residual(self) -> float:
        return self.max_support_residual / self.max_psi if self.max_psi > 0 else 0.0

    def to_dict(self) -> dict:
        def arr(a):
            return [[None if not np.isfinite(x) else float(x) for x in row] for row in a]

        out = {
            "gamma": self.gamma,
            "max_psi": self.max_psi,
            "tol_psi": self.tol_psi,
            "max_norm_gap": self.max_norm_gap,
            "max_support_residual": self.max_support_residual,
            "relative_support_residual": self.relative_support_residual,
            "norm_gap": arr(self.norm_gap),
            "support_residual": arr(self.support_residual),
        }
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def check_first_order(u: ControlTrajectory, adj: AdjointTrajectory, gamma: float) -> OptimalityReport:
    """Norm condition and support condition, one entry per step and component.

    Positive atoms should sit where phi_i = -||phi_i||, negative ones where
    phi_i = +||phi_i||; the residual is the distance of phi_i at the atom from
    that level.
    """
    if u.nt != adj.nt:
        raise ValueError(f"control has {u.nt} steps, adjoint has {adj.nt}")
    g = adj.grid
    nt = u.nt
    tol = psi_threshold(adj)
    norm_gap = np.full((nt, 2), np.nan)
    resid = np.zeros((nt, 2))
    for n in range(nt):
        f = None
        for i in (1, 2):
            m = u.values[n].component(i)
            psi = adj.psi[n, i - 1]
            if psi > tol:
                norm_gap[n, i - 1] = abs(m.tv() - gamma)
            if m.natoms == 0:
                continue
            if f is None:
                f = adj.velocity(n)
            vals = np.array([interpolate_field(g, f, x, i) for x, _ in m.atoms()])
            resid[n, i - 1] = float(np.max(np.abs(vals + np.sign(m.weights) * psi)))
    return OptimalityReport(gamma, float(np.max(adj.psi, initial=0.0)), tol, norm_gap, resid)


# ------------------------------------------------------------------ cones
def _zv_norm(record: EvalRecord, v: ControlTrajectory) -> float:
    z = solve_linearized(record.grid, record.params, record.state, v)
    return l2q_norm(record.grid, record.params, z.vel)


def cone_membership(
    record: EvalRecord,
    u_bar: ControlTrajectory,
    v: ControlTrajectory,
    gamma: float,
    tau: float = DEFAULT_TAU,
    tol: float = 1e-10,
) -> dict:
    """Membership of v in the critical cone and in its tau-relaxation.

    Per active (n, i), i.e. ||u_bar_i(t_n)|| = gamma within ``tol``:
    j' <= 0 always, and j' = 0 when phi_i(t_n) is not zero (critical cone).
    The Lagrangian derivative must vanish (critical cone) or stay below
    tau*||z_v|| (relaxed cone), which also requires
    sum dt psi_i j' >= -tau*||z_v||.
    """
    adj = record.adjoint
    dt = record.params.dt
    tol_psi = psi_threshold(adj)
    nt = v.nt
    jprime = np.zeros((nt, 2))
    active = np.zeros((nt, 2), dtype=bool)
    for n in range(nt):
        for i in (1, 2):
            ub = u_bar.values[n].component(i)
            active[n, i - 1] = abs(ub.tv() - gamma) <= tol
            jprime[n, i - 1] = j_directional(ub, v.values[n].component(i))
    psi = adj.psi[:nt]
    nonzero = psi > tol_psi
    jtol = tol * max(1.0, gamma)

    sign_ok = bool(np.all(jprime[active] <= jtol))
    zero_ok = bool(np.all(np.abs(jprime[active & nonzero]) <= jtol))
    lag = lagrangian_derivative(record, u_bar, v)
    lag_scale = tol * dt * float(np.sum(psi)) + tol
    weighted = dt * float(np.sum(psi[active] * jprime[active]))
    # slack that keeps the critical cone inside the relaxed one under tolerances
    slack = dt * float(np.sum(psi[active & nonzero])) * jtol + dt * float(
        np.sum(psi[active & ~nonzero] * np.abs(jprime[active & ~nonzero]))
    )
    znorm = _zv_norm(record, v)

    in_c = sign_ok and zero_ok and abs(lag) <= lag_scale
    in_c_tau = sign_ok and weighted >= -tau * znorm - slack and lag <= tau * znorm + lag_scale
    return {
        "in_C": in_c,
        "in_C_tau": in_c_tau,
        "tau": tau,
        "j_prime": jprime,
        "active": active,
        "lagrangian_derivative": lag,
        "weighted_j_prime": weighted,
        "z_norm": znorm,
    }


def critical_direction(u_bar: ControlTrajectory, adj: AdjointTrajectory, gamma: float, rng, tol: float = 1e-10):
    """Random direction built to satisfy the critical-cone conditions.

    On components with atoms and phi not zero, the direction is a reweighting
    of u_bar's atoms with zero net j'; on active components with phi = 0 it
    shrinks u_bar (j' < 0); elsewhere it is empty.
    """
    tol_psi = psi_threshold(adj)
    vals = []
    for n, m in enumerate(u_bar.values):
        comps = []
        for i in (1, 2):
            ub = m.component(i)
            if ub.natoms == 0:
                comps.append(ub)
                continue
            s = np.sign(ub.weights)
            active = abs(ub.tv() - gamma) <= tol
            if active and adj.psi[n, i - 1] > tol_psi:
                # j' = sum sign(w_u) w_v must vanish
                r = rng.normal(size=ub.natoms)
                w = r - np.dot(r, s) / ub.natoms * s
            elif active:
                w = -abs(rng.normal()) * ub.weights
            else:
                w = rng.normal(size=ub.natoms) * s
            comps.append(ScalarAtomicMeasure.from_atoms(ub.positions, w))
        vals.append(VectorAtomicMeasure(*comps))
    return ControlTrajectory(tuple(vals), u_bar.dt)


def random_direction(grid, nt: int, dt: float, rng, atoms: int = 2) -> ControlTrajectory:
    """Atoms at random omega nodes with normal weights."""
    vals = []
    for _ in range(nt):
        comps = []
        for i in (1, 2):
            ii, jj = np.nonzero(grid.omega_mask(i))
            pick = rng.integers(0, ii.size, size=atoms)
            pos = [grid.node_position(i, ii[k], jj[k]) for k in pick]
            comps.append(ScalarAtomicMeasure.from_atoms(pos, rng.normal(size=atoms)))
        vals.append(VectorAtomicMeasure(*comps))
    return ControlTrajectory(tuple(vals), dt)


@dataclass
class SecondOrderScan:
    n_dirs: int
    accepted: int
    curvatures: list
    min_curvature: float | None

    def to_dict(self) -> dict:
        return {
            "n_dirs": self.n_dirs,
            "accepted": self.accepted,
            "min_curvature": self.min_curvature,
            "curvatures": list(self.curvatures),
        }


def second_order_necessary_scan(
    u_bar: ControlTrajectory, record: EvalRecord, n_dirs: int, gamma: float, seed: int = 0, tol: float = 1e-8
) -> SecondOrderScan:
    """Min of J''(u_bar) v^2 over sampled directions that pass the critical-cone test.

    Half of the candidates are built to be critical, half are unstructured;
    the filter decides in both cases.
    """
    rng = np.random.default_rng(seed)
    g, p = record.grid, record.params
    curv = []
    for k in range(n_dirs):
        if k % 2 == 0:
            v = critical_direction(u_bar, record.adjoint, gamma, rng)
        else:
            v = random_direction(g, u_bar.nt, u_bar.dt, rng)
        if not cone_membership(record, u_bar, v, gamma, tol=tol)["in_C"]:
            continue
        curv.append(curvature_form(g, p, record, v))
    return SecondOrderScan(n_dirs, len(curv), curv, min(curv) if curv else None)


# ----------------------------------------------------------- growth probe
@dataclass
class GrowthProbe:
    seed: int
    radius: float
    dist2: np.ndarray
    dJ: np.ndarray
    surrogate: np.ndarray
    rejected: int
    kappa: float | None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "radius": self.radius,
            "n_samples": int(self.dist2.size),
            "rejected": self.rejected,
            "kappa": self.kappa,
            "table": [[float(a), float(b), float(c)] for a, b, c in zip(self.dist2, self.dJ, self.surrogate)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def surrogate_distance(grid, params, u: ControlTrajectory, w: ControlTrajectory) -> float:
    """L2(Q) norm of the difference of spread forcings (piecewise constant in time)."""
    d = axpy(-1.0, w, u, eps=0.0)
    total = sum(float(np.sum(forcing_from_measure(grid, m) ** 2)) for m in d.values)
    return float(np.sqrt(params.dt * grid.cell_area * total))


def _jitter(grid, u_bar: ControlTrajectory, gamma: float, rng, pos_prob: float = 0.5, weight_scale: float = 0.2):
    """Move atoms to neighbouring omega nodes and jitter weights; back into the ball."""
    vals = []
    for m in u_bar.values:
        comps = []
        for i in (1, 2):
            c = m.component(i)
            if c.natoms == 0:
                comps.append(c)
                continue
            xs = grid.x1 if i == 1 else grid.x2
            ys = grid.y1 if i == 1 else grid.y2
            mask = grid.omega_mask(i)
            pos = []
            for x, y in c.positions:
                a = int(np.argmin(np.abs(xs - x)))
                b = int(np.argmin(np.abs(ys - y)))
                if rng.random() < pos_prob:
                    da, db = rng.integers(-1, 2, size=2)
                    if 0 <= a + da < xs.size and 0 <= b + db < ys.size and mask[a + da, b + db]:
                        a, b = a + da, b + db
                        x, y = xs[a], ys[b]
                pos.append((x, y))
            w = c.weights * (1.0 + weight_scale * rng.normal(size=c.natoms))
            tv = float(np.sum(np.abs(w)))
            if tv > gamma:
                w = w * (gamma / tv)
            comps.append(ScalarAtomicMeasure.from_atoms(pos, w))
        vals.append(VectorAtomicMeasure(*comps))
    return ControlTrajectory(tuple(vals), u_bar.dt)


def quadratic_growth_probe(
    u_bar: ControlTrajectory,
    record: EvalRecord,
    n_samples: int,
    radius: float,
    gamma: float,
    seed: int = 0,
) -> GrowthProbe:
    """Pairs (||y_u - y_bar||^2, J(u) - J(u_bar)) for seeded feasible perturbations.

    Perturbations farther than ``radius`` in the surrogate metric are pulled
    back along the segment to u_bar, which keeps them feasible. Candidates
    that still violate the constraint are counted as rejected.
    """
    rng = np.random.default_rng(seed)
    g, p = record.grid, record.params
    ybar = record.state.vel
    dist2, dj, sur = [], [], []
    rejected = 0
    for _ in range(n_samples):
        u = _jitter(g, u_bar, gamma, rng)
        d = surrogate_distance(g, p, u, u_bar)
        if d > radius:
            u = axpy(radius / d, axpy(-1.0, u_bar, u, eps=0.0), u_bar, eps=0.0)
            d = surrogate_distance(g, p, u, u_bar)
        if not u.feasible(gamma):
            rejected += 1
            continue
        rec = eval_J(g, p, record.problem, u)
        dist2.append(l2q_norm(g, p, rec.state.vel - ybar) ** 2)
        dj.append(rec.j_value - record.j_value)
        sur.append(d)
    dist2_a, dj_a = np.array(dist2), np.array(dj)
    pos = dist2_a > 0
    kappa = float(np.min(2.0 * dj_a[pos] / dist2_a[pos])) if np.any(pos) else None
    return GrowthProbe(seed, radius, dist2_a, dj_a, np.array(sur), rejected, kappa)
