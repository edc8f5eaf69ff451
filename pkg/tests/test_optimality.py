import json

import numpy as np
import pytest

from nsmc.adjoint import AdjointTrajectory
from nsmc.measures import ControlTrajectory, ScalarAtomicMeasure, VectorAtomicMeasure
from nsmc.objective import curvature_form, eval_J
from nsmc.optimality import (
    check_first_order,
    cone_membership,
    critical_direction,
    psi_threshold,
    quadratic_growth_probe,
    random_direction,
    second_order_necessary_scan,
    surrogate_distance,
)
from nsmc.optimizer import CgmConfig, lmo, optimize

from helpers import rand_u

GAMMA = 1.0


@pytest.fixture(scope="module")
def solved(grid, params, problem):
    res = optimize(grid, params, problem, ControlTrajectory.zero(params.nt, params.dt), CgmConfig(gamma=GAMMA, max_iter=30))
    return res


def _moved(grid, u, n, comp):
    """Shift the (single) atom of u_comp(t_n) by one node along x."""
    vals = list(u.values)
    m = vals[n].component(comp)
    (x, y), w = next(m.atoms())
    moved = ScalarAtomicMeasure.from_atoms([(x + grid.hx if x + grid.hx <= 0.75 else x - grid.hx, y)], [w])
    comps = [moved if i == comp else vals[n].component(i) for i in (1, 2)]
    vals[n] = VectorAtomicMeasure(*comps)
    return ControlTrajectory(tuple(vals), u.dt)


def test_lmo_output_satisfies_conditions(grid, params, problem, rng):
    adj = eval_J(grid, params, problem, rand_u(grid, params, rng)).adjoint
    rep = check_first_order(lmo(adj, GAMMA), adj, GAMMA)
    assert rep.max_support_residual == 0.0
    assert rep.max_norm_gap == 0.0


def test_moved_atom_is_detected(grid, params, problem, rng):
    adj = eval_J(grid, params, problem, rand_u(grid, params, rng)).adjoint
    u = _moved(grid, lmo(adj, GAMMA), 2, 1)
    rep = check_first_order(u, adj, GAMMA)
    (x, y), w = next(u.values[2].comp1.atoms())
    from nsmc.grid import interpolate_field

    expect = abs(interpolate_field(grid, adj.velocity(2), (x, y), 1) + np.sign(w) * adj.psi[2, 0])
    assert rep.support_residual[2, 0] == pytest.approx(expect, rel=1e-14)
    assert rep.support_residual[2, 0] > 0
    assert rep.norm_gap[2, 0] == 0.0


def test_report_scales_with_phi(grid, params, problem, rng):
    adj = eval_J(grid, params, problem, rand_u(grid, params, rng)).adjoint
    u = rand_u(grid, params, rng, total=GAMMA)
    scaled = AdjointTrajectory(adj.grid, 3.0 * adj.vel, 3.0 * adj.pres, 3.0 * adj.psi, adj.argmax, adj.dt)
    a, b = check_first_order(u, adj, GAMMA), check_first_order(u, scaled, GAMMA)
    np.testing.assert_allclose(b.support_residual, 3.0 * a.support_residual, rtol=1e-13)
    assert np.array_equal(np.isnan(a.norm_gap), np.isnan(b.norm_gap))


def test_report_json_roundtrip(grid, params, problem, rng):
    adj = eval_J(grid, params, problem, rand_u(grid, params, rng)).adjoint
    rep = check_first_order(lmo(adj, GAMMA), adj, GAMMA)
    d = json.loads(rep.to_json())
    assert d["tol_psi"] == pytest.approx(psi_threshold(adj))
    assert rep.to_json() == check_first_order(lmo(adj, GAMMA), adj, GAMMA).to_json()


def test_converged_output_near_stationary(solved):
    rep = check_first_order(solved.u, solved.record.adjoint, GAMMA)
    assert rep.max_norm_gap <= 1e-6
    assert np.all(rep.support_residual >= 0)


def test_zero_direction_in_both_cones(grid, params, solved):
    v = ControlTrajectory.zero(params.nt, params.dt)
    c = cone_membership(solved.record, solved.u, v, GAMMA)
    assert c["in_C"] and c["in_C_tau"]


def test_negative_of_ubar(grid, params, solved):
    c = cone_membership(solved.record, solved.u, solved.u.scaled(-1.0), GAMMA)
    act = c["active"]
    assert act.any()
    np.testing.assert_allclose(c["j_prime"][act], -GAMMA)


def test_critical_cone_inside_relaxed(grid, params, solved, rng):
    for k in range(12):
        if k % 2:
            v = random_direction(grid, params.nt, params.dt, rng)
        else:
            v = critical_direction(solved.u, solved.record.adjoint, GAMMA, rng)
        c = cone_membership(solved.record, solved.u, v, GAMMA)
        assert (not c["in_C"]) or c["in_C_tau"]


def test_scan_homogeneity(grid, params, solved, rng):
    v = critical_direction(solved.u, solved.record.adjoint, GAMMA, rng)
    a = cone_membership(solved.record, solved.u, v, GAMMA, tol=1e-8)
    b = cone_membership(solved.record, solved.u, v.scaled(2.0), GAMMA, tol=1e-8)
    assert a["in_C"] == b["in_C"]
    ca = curvature_form(grid, params, solved.record, v)
    assert curvature_form(grid, params, solved.record, v.scaled(2.0)) == pytest.approx(4 * ca, rel=1e-12)
    assert curvature_form(grid, params, solved.record, ControlTrajectory.zero(params.nt, params.dt)) == 0.0


def test_scan_reports(solved):
    scan = second_order_necessary_scan(solved.u, solved.record, 4, GAMMA, seed=3)
    assert scan.n_dirs == 4 and scan.accepted == len(scan.curvatures)
    assert scan.min_curvature is None or scan.min_curvature == min(scan.curvatures)


def test_probe_reproducible_and_feasible(grid, params, solved):
    a = quadratic_growth_probe(solved.u, solved.record, 6, 0.05, GAMMA, seed=11)
    b = quadratic_growth_probe(solved.u, solved.record, 6, 0.05, GAMMA, seed=11)
    assert a.to_json() == b.to_json()
    assert a.dist2.size + a.rejected == 6
    assert np.all(a.surrogate <= 0.05 * (1 + 1e-12))


def test_probe_without_samples(solved):
    p = quadratic_growth_probe(solved.u, solved.record, 0, 0.05, GAMMA)
    assert p.kappa is None and json.loads(p.to_json())["kappa"] is None


def test_surrogate_distance_zero_for_identical(grid, params, solved):
    assert surrogate_distance(grid, params, solved.u, solved.u) == 0.0
