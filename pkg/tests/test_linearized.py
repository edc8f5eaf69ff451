import numpy as np
import pytest

from nsmc.forward import SolverParams, l2q_norm, solve_state
from nsmc.linearized import solve_linearized, solve_second
from nsmc.measures import ControlTrajectory, axpy

from helpers import rand_u


def remainders(grid, params, u, v, order):
    base = solve_state(grid, params, None, None, u)
    z = solve_linearized(grid, params, base, v)
    zz = solve_second(grid, params, base, z, z) if order == 2 else None
    out = []
    for k in range(1, 6):
        eps = 2.0**-k
        y = solve_state(grid, params, None, None, axpy(eps, v, u, eps=0.0)).vel
        r = y - base.vel - eps * z.vel
        if zz is not None:
            r = r - 0.5 * eps**2 * zz.vel
        out.append(l2q_norm(grid, params, r))
    return np.array(out)


def taylor_order(rem):
    return float(np.polyfit(np.log2(2.0 ** -np.arange(1, rem.size + 1)), np.log2(rem), 1)[0])


def test_first_order_taylor(grid, params, rng):
    u, v = rand_u(grid, params, rng, 1.0), rand_u(grid, params, rng, 1.0)
    assert taylor_order(remainders(grid, params, u, v, 1)) >= 1.9


def test_second_order_taylor(grid, params, rng):
    u, v = rand_u(grid, params, rng, 1.0), rand_u(grid, params, rng, 1.0)
    assert taylor_order(remainders(grid, params, u, v, 2)) >= 2.7


def test_linearized_is_linear(grid, params, rng):
    u, v, w = (rand_u(grid, params, rng, 1.0) for _ in range(3))
    base = solve_state(grid, params, None, None, u)
    za = solve_linearized(grid, params, base, axpy(2.0, w, v, eps=0.0))
    zv = solve_linearized(grid, params, base, v)
    zw = solve_linearized(grid, params, base, w)
    np.testing.assert_allclose(za.vel, zv.vel + 2 * zw.vel, atol=1e-12)
    assert np.max(np.abs(grid.div @ za.vel.T)) < 1e-10


def test_second_order_symmetric(grid, params, rng):
    u, v, w = (rand_u(grid, params, rng, 1.0) for _ in range(3))
    base = solve_state(grid, params, None, None, u)
    z1 = solve_linearized(grid, params, base, v)
    z2 = solve_linearized(grid, params, base, w)
    np.testing.assert_allclose(
        solve_second(grid, params, base, z1, z2).vel, solve_second(grid, params, base, z2, z1).vel, atol=1e-13
    )


def test_zero_direction(grid, params, rng):
    base = solve_state(grid, params, None, None, rand_u(grid, params, rng))
    z = solve_linearized(grid, params, base, ControlTrajectory.zero(params.nt, params.dt))
    assert not z.vel.any()


def test_base_mismatch(grid, params, rng):
    base = solve_state(grid, params, None, None, rand_u(grid, params, rng))
    other = SolverParams(nu=0.1, T=params.T, nt=params.nt)
    with pytest.raises(ValueError, match="different"):
        solve_linearized(grid, other, base, ControlTrajectory.zero(params.nt, params.dt))
