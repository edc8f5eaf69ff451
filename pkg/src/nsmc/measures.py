"""Atomic measures on omega and piecewise-constant control trajectories."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable

import numpy as np

EPS_ATOM = 1e-12
CSV_HEADER = ["t_index", "component", "x", "y", "weight"]


@dataclass(frozen=True, eq=False)
class ScalarAtomicMeasure:
    """Finite signed sum of Diracs; atoms kept sorted by (x, y), positions unique."""

    positions: np.ndarray  # (k, 2)
    weights: np.ndarray  # (k,)

    @classmethod
    def from_atoms(cls, positions, weights, eps: float = 0.0) -> "ScalarAtomicMeasure":
        pos = np.asarray(positions, dtype=float).reshape(-1, 2)
        w = np.asarray(weights, dtype=float).reshape(-1)
        if pos.shape[0] != w.shape[0]:
            raise ValueError("positions and weights differ in length")
        if w.size == 0:
            return EMPTY
        order = np.lexsort((w, pos[:, 1], pos[:, 0]))
        pos, w = pos[order], w[order]
        # merge exact duplicates, summing in sorted order
        uniq, start = np.unique(pos, axis=0, return_index=True)
        if len(uniq) != len(pos):
            w = np.add.reduceat(w, np.sort(start))
            pos = pos[np.sort(start)]
        keep = np.abs(w) > eps
        pos, w = pos[keep], w[keep]
        pos.setflags(write=False)
        w.setflags(write=False)
        return cls(pos, w)

    @property
    def natoms(self) -> int:
        return int(self.weights.shape[0])

    def tv(self) -> float:
        return float(np.sum(np.abs(self.weights)))

    def scaled(self, a: float) -> "ScalarAtomicMeasure":
        return ScalarAtomicMeasure.from_atoms(self.positions, a * self.weights)

    def atoms(self) -> Iterable[tuple[tuple[float, float], float]]:
        for p, w in zip(self.positions, self.weights):
            yield (float(p[0]), float(p[1])), float(w)

    def positive_part(self) -> "ScalarAtomicMeasure":
        m = self.weights > 0
        return ScalarAtomicMeasure.from_atoms(self.positions[m], self.weights[m])

    def negative_part(self) -> "ScalarAtomicMeasure":
        m = self.weights < 0
        return ScalarAtomicMeasure.from_atoms(self.positions[m], -self.weights[m])

    def __eq__(self, other):
        return (
            isinstance(other, ScalarAtomicMeasure)
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.weights, other.weights)
        )


EMPTY = ScalarAtomicMeasure(np.zeros((0, 2)), np.zeros(0))
EMPTY.positions.setflags(write=False)
EMPTY.weights.setflags(write=False)


def combine(a: float, v: ScalarAtomicMeasure, u: ScalarAtomicMeasure, eps: float = EPS_ATOM) -> ScalarAtomicMeasure:
    """a*v + u with atoms at equal positions merged and |w| <= eps pruned."""
    if v.natoms == 0 or a == 0.0:
        return u
    pos = np.concatenate([u.positions, v.positions])
    w = np.concatenate([u.weights, a * v.weights])
    return ScalarAtomicMeasure.from_atoms(pos, w, eps)


@dataclass(frozen=True, eq=False)
class VectorAtomicMeasure:
    comp1: ScalarAtomicMeasure = EMPTY
    comp2: ScalarAtomicMeasure = EMPTY

    def component(self, i: int) -> ScalarAtomicMeasure:
        return self.comp1 if i == 1 else self.comp2

    def __eq__(self, other):
        return isinstance(other, VectorAtomicMeasure) and self.comp1 == other.comp1 and self.comp2 == other.comp2


def tv_norm(m: VectorAtomicMeasure) -> float:
    """max(||u1||, ||u2||), each the sum of absolute atom weights."""
    return max(m.comp1.tv(), m.comp2.tv())


@dataclass(frozen=True, eq=False)
class ControlTrajectory:
    """Control value ``values[n]`` acts on (t_n, t_{n+1}]."""

    values: tuple[VectorAtomicMeasure, ...]
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))

    @property
    def nt(self) -> int:
        return len(self.values)

    @classmethod
    def zero(cls, nt: int, dt: float) -> "ControlTrajectory":
        return cls(tuple(VectorAtomicMeasure() for _ in range(nt)), dt)

    @classmethod
    def constant(cls, value: VectorAtomicMeasure, nt: int, dt: float) -> "ControlTrajectory":
        return cls(tuple(value for _ in range(nt)), dt)

    def norms(self) -> np.ndarray:
        return np.array([tv_norm(v) for v in self.values])

    def feasible(self, gamma: float, tol: float = 1e-12) -> bool:
        return bool(np.all(self.norms() <= gamma + tol))

    def scaled(self, a: float) -> "ControlTrajectory":
        return ControlTrajectory(
            tuple(VectorAtomicMeasure(v.comp1.scaled(a), v.comp2.scaled(a)) for v in self.values), self.dt
        )

    def atom_counts(self) -> np.ndarray:
        """(nt, 2) atom counts per step and component."""
        return np.array([[v.comp1.natoms, v.comp2.natoms] for v in self.values], dtype=int).reshape(-1, 2)

    def __eq__(self, other):
        return isinstance(other, ControlTrajectory) and self.dt == other.dt and self.values == other.values


def axpy(a: float, v: ControlTrajectory, u: ControlTrajectory, eps: float = EPS_ATOM) -> ControlTrajectory:
    if v.nt != u.nt:
        raise ValueError(f"trajectory lengths differ: {v.nt} vs {u.nt}")
    if a == 0.0:
        return u
    vals = tuple(
        VectorAtomicMeasure(combine(a, vv.comp1, uu.comp1, eps), combine(a, vv.comp2, uu.comp2, eps))
        for vv, uu in zip(v.values, u.values)
    )
    return ControlTrajectory(vals, u.dt)


def lebesgue_decompose(v: ScalarAtomicMeasure, u: ScalarAtomicMeasure):
    """Split v against |u|.

    Returns ``(g_v, v_s)``: ``g_v`` maps each atom position of u to the density
    weight_v/|weight_u| (0 where v has no atom), ``v_s`` holds v's atoms off
    supp(u).
    """
    u_pos = {(float(p[0]), float(p[1])): float(w) for p, w in zip(u.positions, u.weights)}
    g = {x: 0.0 for x in u_pos}
    sp_pos, sp_w = [], []
    for x, w in v.atoms():
        if x in u_pos:
            g[x] = w / abs(u_pos[x])
        else:
            sp_pos.append(x)
            sp_w.append(w)
    return g, ScalarAtomicMeasure.from_atoms(np.array(sp_pos).reshape(-1, 2), np.array(sp_w))


def j_directional(u: ScalarAtomicMeasure, v: ScalarAtomicMeasure) -> float:
    """One-sided derivative of the TV norm at u in direction v."""
    g, v_s = lebesgue_decompose(v, u)
    absolutely_continuous = sum(g[x] * w for x, w in u.atoms())
    return float(absolutely_continuous + v_s.tv())


# ---------------------------------------------------------------------- CSV
def write_control_csv(path, u: ControlTrajectory) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(CSV_HEADER)
        for n, val in enumerate(u.values):
            for i in (1, 2):
                for (x, y), w in val.component(i).atoms():
                    wr.writerow([n, i, f"{x:.17g}", f"{y:.17g}", f"{w:.17g}"])


def read_control_csv(path, nt: int, dt: float) -> ControlTrajectory:
    rows: dict[tuple[int, int], list] = {}
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != CSV_HEADER:
            raise ValueError(f"{path}: bad control CSV header {header}")
        for rec in rd:
            if not rec:
                continue
            n, i = int(rec[0]), int(rec[1])
            if not (0 <= n < nt) or i not in (1, 2):
                raise ValueError(f"{path}: row {rec} out of range")
            rows.setdefault((n, i), []).append((float(rec[2]), float(rec[3]), float(rec[4])))
    vals = []
    for n in range(nt):
        comps = []
        for i in (1, 2):
            a = np.array(rows.get((n, i), []), dtype=float).reshape(-1, 3)
            comps.append(ScalarAtomicMeasure.from_atoms(a[:, :2], a[:, 2]))
        vals.append(VectorAtomicMeasure(*comps))
    return ControlTrajectory(tuple(vals), dt)


def forcing_from_measure(grid, m: VectorAtomicMeasure) -> np.ndarray:
    """Packed interior forcing of all atoms of ``m`` (sum of spread atoms)."""
    from .grid import spread_atom

    fx = np.zeros(grid.shape1)
    fy = np.zeros(grid.shape2)
    for (x, w) in m.comp1.atoms():
        fx += spread_atom(grid, x, w, 1)
    for (x, w) in m.comp2.atoms():
        fy += spread_atom(grid, x, w, 2)
    return grid.pack_forcing(fx, fy)


def pairing(grid, m: VectorAtomicMeasure, field) -> float:
    """<m, field> = sum over atoms of weight * field(position)."""
    from .grid import interpolate_field

    total = 0.0
    for i in (1, 2):
        for x, w in m.component(i).atoms():
            total += w * interpolate_field(grid, field, x, i)
    return float(total)
