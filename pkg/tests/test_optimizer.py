import numpy as np
import pytest

from nsmc.measures import ControlTrajectory, ScalarAtomicMeasure, VectorAtomicMeasure, pairing
from nsmc.objective import ProblemData, directional_derivative, eval_J
from nsmc.optimality import random_direction
from nsmc.optimizer import CgmConfig, InfeasibleStart, fw_gap, lmo, optimize

from helpers import rand_u

GAMMA = 1.0


def scaled_direction(grid, params, rng, gamma):
    v = random_direction(grid, params.nt, params.dt, rng, atoms=3)
    vals = []
    for m in v.values:
        comps = [m.component(i).scaled(gamma * rng.random() / max(m.component(i).tv(), 1e-300)) for i in (1, 2)]
        vals.append(VectorAtomicMeasure(*comps))
    return ControlTrajectory(tuple(vals), v.dt)


def test_lmo_minimizes_linear_functional(grid, params, problem, rng):
    rec = eval_J(grid, params, problem, rand_u(grid, params, rng))
    best = directional_derivative(rec, lmo(rec.adjoint, GAMMA))
    for _ in range(100):
        v = scaled_direction(grid, params, rng, GAMMA)
        assert v.feasible(GAMMA)
        assert best <= directional_derivative(rec, v) + 1e-15


def test_lmo_structure(grid, params, problem, rng):
    adj = eval_J(grid, params, problem, rand_u(grid, params, rng)).adjoint
    v = lmo(adj, GAMMA)
    assert v.atom_counts().max() <= 1
    for n, m in enumerate(v.values):
        for i in (1, 2):
            if adj.psi[n, i - 1] > 0:
                assert m.component(i).tv() == GAMMA
                # weight opposes the sign of phi at the argmax node
                val = pairing(grid, VectorAtomicMeasure(*(m.component(k) if k == i else ScalarAtomicMeasure.from_atoms([], []) for k in (1, 2))), adj.velocity(n))
                assert val == pytest.approx(-GAMMA * adj.psi[n, i - 1], rel=1e-13)


def test_lmo_zero_gamma(grid, params, problem, rng):
    adj = eval_J(grid, params, problem, rand_u(grid, params, rng)).adjoint
    assert lmo(adj, 0.0).atom_counts().sum() == 0


def test_gap_nonnegative_and_zero_at_lmo(grid, params, problem, rng):
    rec = eval_J(grid, params, problem, rand_u(grid, params, rng))
    v = lmo(rec.adjoint, GAMMA)
    assert fw_gap(rec, rand_u(grid, params, rng), v) >= 0
    assert fw_gap(rec, v, v) == 0.0


def test_zero_gamma_returns_zero_control(grid, params, problem):
    u0 = ControlTrajectory.zero(params.nt, params.dt)
    res = optimize(grid, params, problem, u0, CgmConfig(gamma=0.0, max_iter=5))
    assert res.u == u0 and res.converged


def test_zero_target_is_optimal_at_zero(grid, params):
    prob = ProblemData.build(grid, params)
    res = optimize(grid, params, prob, ControlTrajectory.zero(params.nt, params.dt), CgmConfig(gamma=1.0, max_iter=5))
    assert res.converged and len(res.log) == 1 and res.log.gaps[0] == 0.0


def test_infeasible_start(grid, params, problem, rng):
    with pytest.raises(InfeasibleStart):
        optimize(grid, params, problem, rand_u(grid, params, rng, total=2.0), CgmConfig(gamma=1.0))


@pytest.mark.parametrize("kw", [dict(gamma=-1.0), dict(gamma=1.0, step_rule="exact"), dict(gamma=1.0, armijo_c=1.5)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        CgmConfig(**kw)


def _run(grid, params, problem, rule="armijo", iters=12):
    seen = []
    res = optimize(
        grid,
        params,
        problem,
        ControlTrajectory.zero(params.nt, params.dt),
        CgmConfig(gamma=GAMMA, max_iter=iters, step_rule=rule, checkpoint_every=1),
        checkpoint=lambda k, u, log: seen.append(u),
    )
    return res, seen


def test_armijo_descent_feasibility_sparsity(grid, params, problem):
    res, seen = _run(grid, params, problem)
    assert np.all(np.diff(res.log.J) <= 0)
    assert res.log.J[-1] < res.log.J[0]
    for k, u in enumerate(seen):
        assert u.feasible(GAMMA, tol=1e-12)
        assert u.atom_counts().max() <= k


def test_harmonic_rule(grid, params, problem):
    res, _ = _run(grid, params, problem, rule="harmonic", iters=4)
    steps = [r.step for r in res.log.records[1:]]
    np.testing.assert_allclose(steps, [2.0 / (k + 2.0) for k in range(4)])


def test_deterministic_log(grid, params, problem, tmp_path):
    a, _ = _run(grid, params, problem, iters=5)
    b, _ = _run(grid, params, problem, iters=5)
    assert np.array_equal(a.log.J, b.log.J) and np.array_equal(a.log.gaps, b.log.gaps)
    assert a.u == b.u
    a.log.write_csv(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "iter,J,gap,step,atoms_c1,atoms_c2,seconds"
    assert len(lines) == len(a.log) + 1
