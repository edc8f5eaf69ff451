import numpy as np
import pytest

from nsmc import objective
from nsmc.forward import solve_state
from nsmc.measures import ControlTrajectory, axpy
from nsmc.objective import (
    ProblemData,
    curvature_bilinear,
    curvature_form,
    curvature_second_order,
    directional_derivative,
    eval_J,
    lagrangian_derivative,
    tracking_cost,
)

from nsmc.optimality import random_direction

from helpers import rand_u


def J(grid, params, problem, u):
    return eval_J(grid, params, problem, u).j_value


def fd_gradient_error(grid, params, problem, u, v):
    rec = eval_J(grid, params, problem, u)
    d = directional_derivative(rec, v)
    errs = []
    for eps in (1e-2, 1e-3, 1e-4, 1e-5, 1e-6):
        fd = (J(grid, params, problem, axpy(eps, v, u, 0.0)) - J(grid, params, problem, axpy(-eps, v, u, 0.0))) / (2 * eps)
        errs.append(abs(fd - d) / abs(d))
    return min(errs)


def fd_curvature_error(grid, params, problem, u, v):
    rec = eval_J(grid, params, problem, u)
    c = curvature_form(grid, params, rec, v)
    errs = []
    for eps in (1e-1, 3e-2, 1e-2, 3e-3, 1e-3):
        fd = (J(grid, params, problem, axpy(eps, v, u, 0.0)) - 2 * rec.j_value + J(grid, params, problem, axpy(-eps, v, u, 0.0))) / eps**2
        errs.append(abs(fd - c) / abs(c))
    return min(errs)


def test_zero_target_zero_control(grid, params):
    prob = ProblemData.build(grid, params)
    assert J(grid, params, prob, ControlTrajectory.zero(params.nt, params.dt)) == 0.0


def test_target_reached_gives_zero_cost(grid, params, rng):
    u = rand_u(grid, params, rng)
    st = solve_state(grid, params, None, None, u)
    prob = ProblemData.build(grid, params, yd=st.full_arrays())
    assert tracking_cost(grid, params, st, prob) == pytest.approx(0.0, abs=1e-28)


def test_wall_values_of_target_add_constant(grid, params, rng):
    ux = np.zeros((params.nt + 1,) + grid.shape1)
    uy = np.zeros((params.nt + 1,) + grid.shape2)
    ux[:, 0, :] = 1.0  # only the left wall
    prob = ProblemData.build(grid, params, yd=(ux, uy))
    # half-cell weight, unit value, trapezoid in time over [0, T]
    expect = 0.5 * params.T * grid.cell_area * 0.5 * grid.ny
    assert J(grid, params, prob, ControlTrajectory.zero(params.nt, params.dt)) == pytest.approx(expect)


def test_gradient_fd(grid, params, problem, rng):
    for _ in range(2):
        u, v = rand_u(grid, params, rng, 1.0), rand_u(grid, params, rng, 1.0)
        assert fd_gradient_error(grid, params, problem, u, v) <= 1e-5


def test_curvature_fd(grid, params, problem, rng):
    u, v = rand_u(grid, params, rng, 1.0), rand_u(grid, params, rng, 1.0)
    assert fd_curvature_error(grid, params, problem, u, v) <= 1e-3


def test_cross_term_sign_pinned(grid, params, problem, rng, monkeypatch):
    # flipping the sign of the convective cross term breaks agreement with the second difference
    u, v = rand_u(grid, params, rng, 2.0), rand_u(grid, params, rng, 2.0)
    assert objective.CROSS_TERM_SIGN == 1.0
    good = fd_curvature_error(grid, params, problem, u, v)
    monkeypatch.setattr(objective, "CROSS_TERM_SIGN", -1.0)
    bad = fd_curvature_error(grid, params, problem, u, v)
    assert good <= 1e-3 < bad


def test_curvature_two_routes_agree(grid, params, problem, rng):
    u, v, w = (rand_u(grid, params, rng, 1.0) for _ in range(3))
    rec = eval_J(grid, params, problem, u)
    a = curvature_bilinear(grid, params, rec, v, w)
    b = curvature_second_order(grid, params, rec, v, w)
    assert abs(a - b) <= 1e-8 * abs(a)
    c = curvature_form(grid, params, rec, v)
    assert c == pytest.approx(curvature_second_order(grid, params, rec, v, v), rel=1e-8)


def test_curvature_homogeneous(grid, params, problem, rng):
    u, v = rand_u(grid, params, rng), rand_u(grid, params, rng)
    rec = eval_J(grid, params, problem, u)
    assert curvature_form(grid, params, rec, v.scaled(2.0)) == pytest.approx(4 * curvature_form(grid, params, rec, v), rel=1e-12)


def test_lagrangian_derivative_ignores_absolutely_continuous_part(grid, params, problem, rng):
    u = rand_u(grid, params, rng)
    rec = eval_J(grid, params, problem, u)
    # v supported on supp(u): no singular part
    assert lagrangian_derivative(rec, u, u.scaled(-0.7)) == 0.0
    # v on omega nodes, disjoint from u: everything is singular
    v = random_direction(grid, params.nt, params.dt, rng)
    psi = rec.adjoint.psi
    norms = np.array([[m.comp1.tv(), m.comp2.tv()] for m in v.values])
    expect = directional_derivative(rec, v) + params.dt * float(np.sum(psi[: params.nt] * norms))
    lag = lagrangian_derivative(rec, u, v)
    assert lag == pytest.approx(expect, rel=1e-12)
    assert lag >= -1e-14  # |phi| <= psi on omega nodes
