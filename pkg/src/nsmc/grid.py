"""MAC staggered grid on the rectangle (0, lx) x (0, ly) with no-slip walls.

Layout (index order is ``[i, j]``, x first):

* ``ux`` has shape ``(nx + 1, ny)``; ``ux[i, j]`` sits at ``(i*hx, (j+1/2)*hy)``.
* ``uy`` has shape ``(nx, ny + 1)``; ``uy[i, j]`` sits at ``((i+1/2)*hx, j*hy)``.
* pressure has shape ``(nx, ny)`` at cell centres.

Face values on the walls (``ux[0]``, ``ux[nx]``, ``uy[:, 0]``, ``uy[:, ny]``) are
pinned to zero. Tangential no-slip enters the Laplacian through a reflected
ghost value. The linear algebra works on the packed vector of interior faces.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .assembly import PatternMap

DIRECT_POISSON_LIMIT = 16384


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0
    omega: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)  # a1, b1, a2, b2

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny


@dataclass(frozen=True)
class VelocityField:
    ux: np.ndarray
    uy: np.ndarray

    def component(self, i: int) -> np.ndarray:
        return self.ux if i == 1 else self.uy

    def __add__(self, other):
        return VelocityField(self.ux + other.ux, self.uy + other.uy)

    def __sub__(self, other):
        return VelocityField(self.ux - other.ux, self.uy - other.uy)

    def scaled(self, a: float) -> "VelocityField":
        return VelocityField(a * self.ux, a * self.uy)


@dataclass(frozen=True)
class PressureField:
    p: np.ndarray


def _second_diff(n: int, h: float, reflect: bool) -> sp.csr_matrix:
    d = -2.0 * np.ones(n)
    if reflect:
        # ghost = -interior on both ends (wall halfway between ghost and node)
        d[0] -= 1.0
        d[-1] -= 1.0
    off = np.ones(n - 1)
    return sp.diags([off, d, off], [-1, 0, 1], format="csr") / h**2


def _diff(n: int, h: float) -> sp.csr_matrix:
    """(n) nodes -> (n+1) midpoints, with zero values beyond both ends."""
    return sp.diags([np.ones(n), -np.ones(n)], [0, -1], shape=(n + 1, n), format="csr") / h


def _avg(n: int) -> sp.csr_matrix:
    """(n) interior nodes -> (n+1) midpoints, zero beyond both ends."""
    return sp.diags([0.5 * np.ones(n), 0.5 * np.ones(n)], [0, -1], shape=(n + 1, n), format="csr")


def _avg_inner(n: int) -> sp.csr_matrix:
    """(n) nodes -> (n-1) interior midpoints."""
    return sp.diags([0.5 * np.ones(n - 1), 0.5 * np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr")


class Grid:
    """Immutable grid with precomputed coordinates, omega masks and stencils."""

    def __init__(self, spec: GridSpec):
        nx, ny = spec.nx, spec.ny
        if nx < 4 or ny < 4:
            raise ValueError(f"grid needs nx, ny >= 4, got nx={nx}, ny={ny}")
        if not (spec.lx > 0 and spec.ly > 0):
            raise ValueError("domain side lengths must be positive")
        a1, b1, a2, b2 = spec.omega
        if not (0.0 <= a1 <= b1 <= spec.lx and 0.0 <= a2 <= b2 <= spec.ly):
            raise ValueError(f"omega {spec.omega} is empty or not contained in the closed domain")
        self.spec = spec
        self.nx, self.ny = nx, ny
        self.lx, self.ly = spec.lx, spec.ly
        self.hx, self.hy = spec.hx, spec.hy
        self.cell_area = self.hx * self.hy
        self.omega = (float(a1), float(b1), float(a2), float(b2))

        self.shape1 = (nx + 1, ny)
        self.shape2 = (nx, ny + 1)
        self.n1 = (nx - 1) * ny
        self.n2 = nx * (ny - 1)
        self.nvel = self.n1 + self.n2
        self.npres = nx * ny

        # node coordinates
        self.x1 = np.arange(nx + 1) * self.hx
        self.y1 = (np.arange(ny) + 0.5) * self.hy
        self.x2 = (np.arange(nx) + 0.5) * self.hx
        self.y2 = np.arange(ny + 1) * self.hy

        in1 = _in_omega(self.x1[:, None], self.y1[None, :], self.omega)
        in2 = _in_omega(self.x2[:, None], self.y2[None, :], self.omega)
        in1[0, :] = in1[nx, :] = False
        in2[:, 0] = in2[:, ny] = False
        self.omega_mask1 = in1
        self.omega_mask2 = in2
        for m in (self.omega_mask1, self.omega_mask2):
            m.setflags(write=False)

        self._build_stencils()

    # ------------------------------------------------------------------ stencils
    def _build_stencils(self):
        nx, ny, hx, hy = self.nx, self.ny, self.hx, self.hy
        Ix1, Iy = sp.identity(nx - 1), sp.identity(ny)
        Ix, Iy1 = sp.identity(nx), sp.identity(ny - 1)

        lap1 = sp.kron(_second_diff(nx - 1, hx, False), Iy) + sp.kron(Ix1, _second_diff(ny, hy, True))
        lap2 = sp.kron(_second_diff(nx, hx, True), Iy1) + sp.kron(Ix, _second_diff(ny - 1, hy, False))
        self.laplacian = sp.block_diag([lap1, lap2], format="csr")

        div1 = sp.kron(_diff(nx - 1, hx), Iy)  # (nx*ny) x n1
        div2 = sp.kron(Ix, _diff(ny - 1, hy))
        self.div = sp.hstack([div1, div2], format="csr")
        self.grad = (-self.div.T).tocsr()
        # discrete curl of a streamfunction at interior nodes: its range is
        # exactly the set of divergence-free face fields with zero wall flux
        self.npsi = (nx - 1) * (ny - 1)
        self.curl = sp.vstack(
            [sp.kron(Ix1, _diff(ny - 1, hy)), -sp.kron(_diff(nx - 1, hx), Iy1)], format="csr"
        )
        self.curl_t = self.curl.T.tocsr()

        # divergence-form convection N(a, b) = sum_k D_k ((P_k a) * (Q_k b))
        z1 = lambda rows: sp.csr_matrix((rows, self.n1))
        z2 = lambda rows: sp.csr_matrix((rows, self.n2))
        ncell, ncorner = nx * ny, (nx - 1) * (ny - 1)
        # x-momentum, xx flux at cell centres
        avg_xx = sp.hstack([sp.kron(_avg(nx - 1), Iy), z2(ncell)], format="csr")
        d_xx = sp.vstack([sp.kron(-_diff(nx - 1, hx).T, Iy), z2(ncell).T], format="csr")
        # x-momentum, xy flux at interior corners: (ay averaged in x) * (bx averaged in y)
        ay_at_corner = sp.hstack([z1(ncorner), sp.kron(_avg_inner(nx), Iy1)], format="csr")
        bx_at_corner = sp.hstack([sp.kron(Ix1, _avg_inner(ny)), z2(ncorner)], format="csr")
        d_xy = sp.vstack([sp.kron(Ix1, _diff(ny - 1, hy)), z2(ncorner).T], format="csr")
        # y-momentum, yy flux at cell centres
        avg_yy = sp.hstack([z1(ncell), sp.kron(Ix, _avg(ny - 1))], format="csr")
        d_yy = sp.vstack([z1(ncell).T, sp.kron(Ix, -_diff(ny - 1, hy).T)], format="csr")
        # y-momentum, yx flux at interior corners: (ax averaged in y) * (by averaged in x)
        d_yx = sp.vstack([z1(ncorner).T, sp.kron(_diff(nx - 1, hx), Iy1)], format="csr")
        # corner ordering for the yx flux is (k=1..nx-1, j=1..ny-1), same as for xy
        self.conv_terms = (
            (d_xx, avg_xx, avg_xx),
            (d_xy, ay_at_corner, bx_at_corner),
            (d_yy, avg_yy, avg_yy),
            (d_yx, bx_at_corner, ay_at_corner),
        )

    # -------------------------------------------------------------- pack/unpack
    def pack(self, f: VelocityField) -> np.ndarray:
        return np.concatenate([f.ux[1:-1, :].ravel(), f.uy[:, 1:-1].ravel()])

    def unpack(self, x: np.ndarray) -> VelocityField:
        ux = np.zeros(self.shape1)
        uy = np.zeros(self.shape2)
        ux[1:-1, :] = x[: self.n1].reshape(self.nx - 1, self.ny)
        uy[:, 1:-1] = x[self.n1 :].reshape(self.nx, self.ny - 1)
        return VelocityField(ux, uy)

    def pack_forcing(self, fx: np.ndarray, fy: np.ndarray) -> np.ndarray:
        """Interior part of a forcing pair; wall-normal entries are dropped."""
        return np.concatenate([fx[1:-1, :].ravel(), fy[:, 1:-1].ravel()])

    def zero_velocity(self) -> VelocityField:
        return VelocityField(np.zeros(self.shape1), np.zeros(self.shape2))

    def node_coords(self, component: int) -> tuple[np.ndarray, np.ndarray]:
        if component == 1:
            return np.meshgrid(self.x1, self.y1, indexing="ij")
        return np.meshgrid(self.x2, self.y2, indexing="ij")

    def omega_mask(self, component: int) -> np.ndarray:
        return self.omega_mask1 if component == 1 else self.omega_mask2

    def node_position(self, component: int, i: int, j: int) -> tuple[float, float]:
        if component == 1:
            return float(self.x1[i]), float(self.y1[j])
        return float(self.x2[i]), float(self.y2[j])

    # --------------------------------------------------------------- operators
    def convect(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Packed N(a, b): b advected by a, divergence form."""
        return kernels.convect_packed(self, a, b)

    def convection_jacobian(self, y: np.ndarray) -> sp.csc_matrix:
        """Sparse matrix of z -> N(y, z) + N(z, y)."""
        return self.jacobian_map.matrix(y)

    def _jacobian_terms(self, left=None, right=None):
        terms = []
        for d, p, q in self.conv_terms:
            lhs = d if left is None else left @ d
            terms.append((lhs, p, q if right is None else q @ right))
            terms.append((lhs, q, p if right is None else p @ right))
        return terms

    @cached_property
    def jacobian_map(self) -> PatternMap:
        """Assembler of c + J(y) on packed faces; the pattern also covers I and L."""
        cover = sp.identity(self.nvel) + abs(self.laplacian)
        return PatternMap(self._jacobian_terms(), (self.nvel, self.nvel), self.nvel, [cover])

    @cached_property
    def psi_jacobian_map(self) -> PatternMap:
        """Assembler of c + curl^T J(y) curl in streamfunction space."""
        c = abs(self.curl)
        cover = c.T @ (sp.identity(self.nvel) + abs(self.laplacian)) @ c
        return PatternMap(
            self._jacobian_terms(self.curl_t, self.curl), (self.npsi, self.npsi), self.nvel, [cover]
        )

    def divergence(self, f: VelocityField) -> np.ndarray:
        return (np.diff(f.ux, axis=0) / self.hx) + (np.diff(f.uy, axis=1) / self.hy)

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        """Grid inner product of packed vectors."""
        return float(self.cell_area * np.dot(a, b))

    @cached_property
    def _poisson(self):
        dg = (self.div @ self.grad).tolil()
        # pin cell 0; the remaining equations determine the rest up to the constant
        dg[0, :] = 0.0
        dg[0, 0] = 1.0
        dg = dg.tocsc()
        if self.npres <= DIRECT_POISSON_LIMIT:
            return spla.splu(dg)
        return dg

    def solve_poisson(self, rhs: np.ndarray) -> np.ndarray:
        """Zero-mean q with div(grad q) = rhs (rhs must sum to zero)."""
        rhs = np.array(rhs, dtype=float).ravel()
        rhs[0] = 0.0
        solver = self._poisson
        if isinstance(solver, spla.SuperLU):
            q = solver.solve(rhs)
        else:
            q, info = spla.cg(solver, rhs, rtol=1e-12, maxiter=10 * self.npres)
            if info != 0:
                raise RuntimeError(f"Poisson CG did not converge (info={info})")
        return q - q.mean()

    def project(self, f: VelocityField) -> VelocityField:
        """Discrete L2-orthogonal projection onto divergence-free fields."""
        x = self.pack(f)
        q = self.solve_poisson(self.div @ x)
        return self.unpack(x - self.grad @ q)

    def kinetic_energy(self, f: VelocityField) -> float:
        return 0.5 * self.cell_area * float(np.sum(f.ux**2) + np.sum(f.uy**2))

    # ------------------------------------------------------- atoms and fields
    def contains_omega(self, x: float, y: float) -> bool:
        a1, b1, a2, b2 = self.omega
        return a1 <= x <= b1 and a2 <= y <= b2

    def stencil(self, position, component: int):
        """Bilinear stencil ``(i[4], j[4], w[4])`` on the component's node lattice."""
        x, y = float(position[0]), float(position[1])
        if component == 1:
            fx, fy = x / self.hx, y / self.hy - 0.5
            ni, nj = self.nx + 1, self.ny
        elif component == 2:
            fx, fy = x / self.hx - 0.5, y / self.hy
            ni, nj = self.nx, self.ny + 1
        else:
            raise ValueError(f"component must be 1 or 2, got {component}")
        i0, tx = _axis_weights(fx, ni)
        j0, ty = _axis_weights(fy, nj)
        ii = np.array([i0, i0 + 1, i0, i0 + 1])
        jj = np.array([j0, j0, j0 + 1, j0 + 1])
        w = np.array([(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty])
        return ii, jj, w


def _axis_weights(f: float, n: int) -> tuple[int, float]:
    # node coordinates map back to integers only up to rounding; snap them so
    # that evaluation at a node is exact
    r = round(f)
    if abs(f - r) <= 1e-12 * max(1.0, abs(f)):
        f = float(r)
    # clamp outside the node range: constant extension up to the wall
    if f <= 0.0:
        return 0, 0.0
    if f >= n - 1:
        return n - 2, 1.0
    i0 = min(int(np.floor(f)), n - 2)
    return i0, f - i0


def _in_omega(x, y, omega):
    a1, b1, a2, b2 = omega
    return (x >= a1) & (x <= b1) & (y >= a2) & (y <= b2)


def make_grid(spec: GridSpec) -> Grid:
    return Grid(spec)


def _check_position(grid: Grid, position, need_omega: bool):
    x, y = float(position[0]), float(position[1])
    if need_omega:
        if not grid.contains_omega(x, y):
            raise ValueError(f"position {position} lies outside omega {grid.omega}")
    elif not (0.0 <= x <= grid.lx and 0.0 <= y <= grid.ly):
        raise ValueError(f"position {position} lies outside the domain")


def spread_atom(grid: Grid, position, weight: float, component: int) -> np.ndarray:
    """Dirac atom of mass ``weight`` as a forcing density on the component's faces."""
    _check_position(grid, position, need_omega=True)
    out = np.zeros(grid.shape1 if component == 1 else grid.shape2)
    ii, jj, w = grid.stencil(position, component)
    np.add.at(out, (ii, jj), w * (weight / grid.cell_area))
    return out


def interpolate_field(grid: Grid, field, position, component: int) -> float:
    """Bilinear evaluation; transpose of :func:`spread_atom` under the grid pairing."""
    _check_position(grid, position, need_omega=False)
    arr = field.component(component) if isinstance(field, VelocityField) else field
    ii, jj, w = grid.stencil(position, component)
    return float(np.dot(w, arr[ii, jj]))
