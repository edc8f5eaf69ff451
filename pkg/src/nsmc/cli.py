"""Command-line driver: ``nsmc {solve,adjoint,gradcheck,optimize,check,probe}``.

Exit codes: 0 ok, 2 configuration error, 3 solver failure, 4 verification
threshold not met.
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io as nio
from .adjoint import AdjointTrajectory
from .forward import SolverError, SolverParams, kinetic_energy_trace, solve_state
from .grid import Grid, GridSpec, VelocityField
from .measures import (
    ControlTrajectory,
    ScalarAtomicMeasure,
    VectorAtomicMeasure,
    axpy,
    read_control_csv,
    write_control_csv,
)
from .objective import ProblemData, curvature_form, directional_derivative, eval_J
from .optimality import check_first_order, quadratic_growth_probe, second_order_necessary_scan
from .optimizer import CgmConfig, InfeasibleStart, optimize

log = logging.getLogger("nsmc")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_THRESHOLD = 0, 2, 3, 4
INPUT_KEYS = {
    "y0": ("y0_ux", "y0_uy"),
    "f0": ("f0_ux", "f0_uy"),
    "yd": ("yd_ux", "yd_uy"),
    "control": ("control_csv",),
}


@dataclass
class Setup:
    cfg: nio.RunConfig
    grid: Grid
    params: SolverParams
    problem: ProblemData
    gamma: float
    control: ControlTrajectory


# --------------------------------------------------------------- building
def build_grid(cfg: nio.RunConfig) -> Grid:
    try:
        spec = GridSpec(
            cfg.getint("grid", "nx"),
            cfg.getint("grid", "ny"),
            cfg.getfloat("grid", "lx"),
            cfg.getfloat("grid", "ly"),
            tuple(nio.parse_floats(cfg.get("grid", "omega"), 4)),
        )
        return Grid(spec)
    except ValueError as exc:
        raise nio.ConfigError(f"[grid] {exc}") from None


def build_params(cfg: nio.RunConfig) -> SolverParams:
    try:
        return SolverParams(
            nu=cfg.getfloat("solver", "nu"),
            T=cfg.getfloat("solver", "T"),
            nt=cfg.getint("solver", "nt"),
            picard_max=cfg.getint("solver", "picard_max"),
            picard_tol=cfg.getfloat("solver", "picard_tol"),
        )
    except nio.ConfigError:
        raise
    except ValueError as exc:
        raise nio.ConfigError(f"[solver] {exc}") from None


def _field_pair(cfg, keys, grid: Grid, steps: int) -> tuple[np.ndarray, np.ndarray]:
    ax = nio.read_nsmc1(cfg.path("problem", keys[0]))
    ay = nio.read_nsmc1(cfg.path("problem", keys[1]))
    if ax.shape != (steps,) + grid.shape1 or ay.shape != (steps,) + grid.shape2:
        raise nio.ConfigError(
            f"{keys[0]}/{keys[1]}: shapes {ax.shape}, {ay.shape} do not match "
            f"{(steps,) + grid.shape1}, {(steps,) + grid.shape2}"
        )
    return ax, ay


def reference_control(atoms, nt: int, dt: float) -> ControlTrajectory:
    comps = {1: ([], []), 2: ([], [])}
    for c, x, y, w in atoms:
        comps[c][0].append((x, y))
        comps[c][1].append(w)
    value = VectorAtomicMeasure(
        *(ScalarAtomicMeasure.from_atoms(np.array(p).reshape(-1, 2), np.array(w)) for p, w in comps.values())
    )
    return ControlTrajectory.constant(value, nt, dt)


def build_setup(cfg: nio.RunConfig, need_target: bool = True) -> Setup:
    grid = build_grid(cfg)
    params = build_params(cfg)
    nt = params.nt
    gamma = cfg.getfloat("problem", "gamma")
    if gamma < 0:
        raise nio.ConfigError("[problem] gamma must be non-negative")

    y0 = None
    src = cfg.get("problem", "y0")
    if src == "file":
        ax, ay = _field_pair(cfg, INPUT_KEYS["y0"], grid, 1)
        y0 = VelocityField(ax[0], ay[0])
    elif src != "zero":
        raise nio.ConfigError(f"[problem] y0 = {src!r}; expected zero or file")

    f0 = None
    src = cfg.get("problem", "f0")
    if src == "file":
        ax, ay = _field_pair(cfg, INPUT_KEYS["f0"], grid, nt)
        f0 = [VelocityField(ax[n], ay[n]) for n in range(nt)]
    elif src != "zero":
        raise nio.ConfigError(f"[problem] f0 = {src!r}; expected zero or file")

    src = cfg.get("problem", "control")
    if src == "file":
        try:
            control = read_control_csv(cfg.path("problem", "control_csv"), nt, params.dt)
        except ValueError as exc:
            raise nio.ConfigError(str(exc)) from None
    elif src == "zero":
        control = ControlTrajectory.zero(nt, params.dt)
    else:
        raise nio.ConfigError(f"[problem] control = {src!r}; expected zero or file")

    yd = None
    src = cfg.get("problem", "yd")
    if src == "file":
        yd = _field_pair(cfg, INPUT_KEYS["yd"], grid, nt + 1)
    elif src == "reference":
        ref = reference_control(nio.parse_atoms(cfg.get("problem", "reference_atoms")), nt, params.dt)
        try:
            yd = solve_state(grid, params, y0, f0, ref).full_arrays()
        except ValueError as exc:
            raise nio.ConfigError(f"[problem] reference control: {exc}") from None
    elif src in ("zero", "mms"):
        yd = None
    else:
        raise nio.ConfigError(f"[problem] yd = {src!r}; expected zero, file, reference or mms")

    try:
        problem = ProblemData.build(grid, params, y0=y0, f0=f0, yd=yd)
    except ValueError as exc:
        raise nio.ConfigError(str(exc)) from None
    cfg.derived = {
        "dt": params.dt,
        "hx": grid.hx,
        "hy": grid.hy,
        "nvel": grid.nvel,
        "npres": grid.npres,
    }
    return Setup(cfg, grid, params, problem, gamma, control)


def cgm_config(cfg: nio.RunConfig, gamma: float, checkpoint_every: int = 0) -> CgmConfig:
    try:
        return CgmConfig(
            gamma=gamma,
            max_iter=cfg.getint("optimizer", "max_iter"),
            step_rule=cfg.get("optimizer", "step_rule"),
            armijo_c=cfg.getfloat("optimizer", "armijo_c"),
            armijo_shrink=cfg.getfloat("optimizer", "armijo_shrink"),
            stop_tol=cfg.getfloat("optimizer", "stop_tol"),
            prune_tol=cfg.getfloat("optimizer", "prune_tol"),
            model_step=cfg.getbool("optimizer", "model_step"),
            checkpoint_every=checkpoint_every,
        )
    except nio.ConfigError:
        raise
    except ValueError as exc:
        raise nio.ConfigError(f"[optimizer] {exc}") from None


# ----------------------------------------------------------------- output
def prepare_run_dir(cfg: nio.RunConfig, out: Path) -> Path:
    """Create ``out`` and copy file inputs into ``out/inputs`` so the run is self-contained."""
    out.mkdir(parents=True, exist_ok=True)
    for src_key, keys in INPUT_KEYS.items():
        if cfg.get("problem", src_key) != "file":
            continue
        (out / "inputs").mkdir(exist_ok=True)
        for k in keys:
            p = cfg.path("problem", k)
            dest = out / "inputs" / p.name
            if p.resolve() != dest.resolve():
                shutil.copyfile(p, dest)
            cfg.sections["problem"][k] = str(Path("inputs") / p.name)
    cfg.base_dir = out.resolve()
    return out


def dump_state(out: Path, traj, prefix: str = "") -> None:
    ux, uy = traj.full_arrays()
    nio.write_nsmc1(out / f"{prefix}ux.nsmc", ux)
    nio.write_nsmc1(out / f"{prefix}uy.nsmc", uy)
    nio.write_nsmc1(out / f"{prefix}p.nsmc", traj.pres)


def dump_adjoint(out: Path, adj: AdjointTrajectory) -> None:
    g = adj.grid
    nt = adj.nt
    ux = np.zeros((nt + 1,) + g.shape1)
    uy = np.zeros((nt + 1,) + g.shape2)
    ux[:, 1:-1, :] = adj.vel[:, : g.n1].reshape(nt + 1, g.nx - 1, g.ny)
    uy[:, :, 1:-1] = adj.vel[:, g.n1 :].reshape(nt + 1, g.nx, g.ny - 1)
    nio.write_nsmc1(out / "phi_ux.nsmc", ux)
    nio.write_nsmc1(out / "phi_uy.nsmc", uy)
    nio.write_nsmc1(out / "pi.nsmc", adj.pres)
    nio.write_psi_csv(out / "psi.csv", adj)


# --------------------------------------------------------------- commands
def cmd_solve(cfg: nio.RunConfig, out: Path, args) -> int:
    setup = build_setup(cfg)
    prepare_run_dir(cfg, out)
    extra = {}
    if cfg.get("problem", "yd") == "mms":
        from .mms import observed_orders, spatial_study, temporal_study

        nu = setup.params.nu
        space = spatial_study(nu=nu)
        time_ = temporal_study(nu=nu)
        so = observed_orders([r[2] for r in space])
        to = observed_orders([r[1] for r in time_])
        rows = [["space", n, k, e, so[i - 1] if i else float("nan")] for i, (n, k, e) in enumerate(space)]
        rows += [["time", 32, k, e, to[i - 1] if i else float("nan")] for i, (k, e) in enumerate(time_)]
        nio.write_table(out / "mms_convergence.csv", ["kind", "n", "nt", "error", "order"], rows)
        extra["mms_orders"] = {"space": so, "time": to}
    traj = solve_state(setup.grid, setup.params, setup.problem.y0, setup.problem.f0, setup.control)
    dump_state(out, traj)
    energy = kinetic_energy_trace(traj)
    nio.write_table(out / "energy.csv", ["t", "energy"], [[n * setup.params.dt, e] for n, e in enumerate(energy)])
    nio.write_slice_csv(out / "slice_ux.csv", traj, 1)
    from .objective import tracking_cost

    extra["J"] = tracking_cost(setup.grid, setup.params, traj, setup.problem)
    nio.write_manifest(out, cfg, "solve", extra)
    print(f"solve: J = {extra['J']:.17g}; wrote {out}")
    return EXIT_OK


def cmd_adjoint(cfg: nio.RunConfig, out: Path, args) -> int:
    setup = build_setup(cfg)
    prepare_run_dir(cfg, out)
    rec = eval_J(setup.grid, setup.params, setup.problem, setup.control)
    dump_state(out, rec.state)
    dump_adjoint(out, rec.adjoint)
    nio.write_manifest(out, cfg, "adjoint", {"J": rec.j_value})
    print(f"adjoint: J = {rec.j_value:.17g}; max psi = {rec.adjoint.psi.max():.6e}; wrote {out}")
    return EXIT_OK


def random_control(grid: Grid, nt: int, dt: float, rng, total: float, atoms: int = 2) -> ControlTrajectory:
    """Atoms at uniform random points of omega; each component has TV = ``total``."""
    a1, b1, a2, b2 = grid.spec.omega
    vals = []
    for _ in range(nt):
        comps = []
        for _i in (1, 2):
            pos = np.column_stack([rng.uniform(a1, b1, atoms), rng.uniform(a2, b2, atoms)])
            w = rng.normal(size=atoms)
            w *= total / np.sum(np.abs(w))
            comps.append(ScalarAtomicMeasure.from_atoms(pos, w))
        vals.append(VectorAtomicMeasure(*comps))
    return ControlTrajectory(tuple(vals), dt)


GRAD_EPS = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7)
CURV_EPS = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4)


def gradcheck(setup: Setup, rng, pairs: int, zero_direction: bool = False):
    """FD sweep rows (kind, pair, eps, fd, analytic, rel_err) and per-pair minima."""
    g, p, prob = setup.grid, setup.params, setup.problem
    scale = setup.gamma if setup.gamma > 0 else 1.0
    rows, best = [], {"gradient": [], "curvature": []}
    for k in range(pairs):
        u = random_control(g, p.nt, p.dt, rng, 0.5 * scale)
        v = ControlTrajectory.zero(p.nt, p.dt) if zero_direction else random_control(g, p.nt, p.dt, rng, scale)
        if all(m.comp1.natoms == 0 and m.comp2.natoms == 0 for m in v.values):
            rows.append(["skipped", k, float("nan"), float("nan"), float("nan"), float("nan")])
            continue
        rec = eval_J(g, p, prob, u)
        d1 = directional_derivative(rec, v)
        d2 = curvature_form(g, p, rec, v)
        errs = []
        for eps in GRAD_EPS:
            jp = eval_J(g, p, prob, axpy(eps, v, u, eps=0.0)).j_value
            jm = eval_J(g, p, prob, axpy(-eps, v, u, eps=0.0)).j_value
            fd = (jp - jm) / (2 * eps)
            err = abs(fd - d1) / max(abs(d1), 1e-300)
            errs.append(err)
            rows.append(["gradient", k, eps, fd, d1, err])
        best["gradient"].append(min(errs))
        errs = []
        for eps in CURV_EPS:
            jp = eval_J(g, p, prob, axpy(eps, v, u, eps=0.0)).j_value
            jm = eval_J(g, p, prob, axpy(-eps, v, u, eps=0.0)).j_value
            fd = (jp - 2 * rec.j_value + jm) / eps**2
            err = abs(fd - d2) / max(abs(d2), 1e-300)
            errs.append(err)
            rows.append(["curvature", k, eps, fd, d2, err])
        best["curvature"].append(min(errs))
    return rows, best


def cmd_gradcheck(cfg: nio.RunConfig, out: Path, args) -> int:
    setup = build_setup(cfg)
    prepare_run_dir(cfg, out)
    seed = args.seed if args.seed is not None else cfg.getint("run", "seed")
    rng = np.random.default_rng(seed)
    gtol = args.grad_tol if args.grad_tol is not None else cfg.getfloat("gradcheck", "grad_tol")
    ctol = args.curv_tol if args.curv_tol is not None else cfg.getfloat("gradcheck", "curv_tol")
    rows, best = gradcheck(setup, rng, cfg.getint("gradcheck", "pairs"), args.zero_direction)
    nio.write_table(out / "gradcheck.csv", ["kind", "pair", "eps", "fd", "analytic", "rel_err"], rows)
    skipped = not best["gradient"]
    ok = bool(skipped or (max(best["gradient"]) <= gtol and max(best["curvature"]) <= ctol))
    summary = {
        "seed": seed,
        "grad_tol": gtol,
        "curv_tol": ctol,
        "skipped": skipped,
        "min_rel_err_gradient": best["gradient"],
        "min_rel_err_curvature": best["curvature"],
        "passed": ok,
    }
    (out / "gradcheck.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    nio.write_manifest(out, cfg, "gradcheck", {"seed": seed})
    if skipped:
        print("gradcheck: zero direction, skipped")
        return EXIT_OK
    print(
        f"gradcheck: gradient {max(best['gradient']):.3e} (tol {gtol:g}), "
        f"curvature {max(best['curvature']):.3e} (tol {ctol:g})"
    )
    return EXIT_OK if ok else EXIT_THRESHOLD


def cmd_optimize(cfg: nio.RunConfig, out: Path, args) -> int:
    setup = build_setup(cfg)
    prepare_run_dir(cfg, out)
    every = args.checkpoint_every or 0
    conf = cgm_config(cfg, setup.gamma, every)

    def checkpoint(k, u, itlog):
        d = out / "checkpoints"
        d.mkdir(exist_ok=True)
        write_control_csv(d / f"control_{k:04d}.csv", u)
        itlog.write_csv(out / "iterate_log.csv")

    try:
        res = optimize(setup.grid, setup.params, setup.problem, setup.control, conf, checkpoint)
    except InfeasibleStart as exc:
        raise nio.ConfigError(str(exc)) from None
    write_control_csv(out / "control.csv", res.u)
    res.log.write_csv(out / "iterate_log.csv")
    dump_state(out, res.record.state)
    nio.write_psi_csv(out / "psi.csv", res.record.adjoint)
    # later commands start from the optimized control
    cfg.sections["problem"]["control"] = "file"
    cfg.sections["problem"]["control_csv"] = "control.csv"
    extra = {"J": res.record.j_value, "converged": res.converged, "message": res.message, "iterations": len(res.log) - 1}
    nio.write_manifest(out, cfg, "optimize", extra)
    print(f"optimize: {res.message} after {len(res.log) - 1} iterations; J = {res.record.j_value:.17g}")
    return EXIT_OK


def _load_run(run_dir: Path) -> Setup:
    cfg = nio.config_from_manifest(run_dir)
    return build_setup(cfg)


def cmd_check(run_dir: Path, args) -> int:
    setup = _load_run(run_dir)
    rec = eval_J(setup.grid, setup.params, setup.problem, setup.control)
    rep = check_first_order(setup.control, rec.adjoint, setup.gamma)
    n_dirs = setup.cfg.getint("check", "n_dirs")
    if n_dirs > 0:
        seed = args.seed if args.seed is not None else setup.cfg.getint("run", "seed")
        scan = second_order_necessary_scan(setup.control, rec, n_dirs, setup.gamma, seed=seed)
        rep.extra["second_order"] = scan.to_dict()
    rep.extra["J"] = rec.j_value
    (run_dir / "check_report.json").write_text(rep.to_json() + "\n")
    rows = []
    for n in range(setup.control.nt):
        for i in (1, 2):
            rows.append([n, i, float(rec.adjoint.psi[n, i - 1]), float(rep.norm_gap[n, i - 1]), float(rep.support_residual[n, i - 1])])
    nio.write_table(run_dir / "check_table.csv", ["t_index", "component", "psi", "norm_gap", "support_residual"], rows)
    print(
        f"check: max support residual {rep.max_support_residual:.3e} "
        f"({rep.relative_support_residual:.3e} of max psi), max norm gap {rep.max_norm_gap:.3e}"
    )
    return EXIT_OK


def cmd_probe(run_dir: Path, args) -> int:
    setup = _load_run(run_dir)
    cfg = setup.cfg
    n = args.n if args.n is not None else cfg.getint("probe", "n_samples")
    radius = args.radius if args.radius is not None else cfg.getfloat("probe", "radius")
    seed = args.seed if args.seed is not None else cfg.getint("run", "seed")
    rec = eval_J(setup.grid, setup.params, setup.problem, setup.control)
    probe = quadratic_growth_probe(setup.control, rec, n, radius, setup.gamma, seed=seed)
    (run_dir / "probe_report.json").write_text(probe.to_json() + "\n")
    nio.write_table(
        run_dir / "probe_table.csv",
        ["dist2", "dJ", "surrogate"],
        [[float(a), float(b), float(c)] for a, b, c in zip(probe.dist2, probe.dJ, probe.surrogate)],
    )
    kappa = "null" if probe.kappa is None else f"{probe.kappa:.6e}"
    print(f"probe: {probe.dist2.size} samples, {probe.rejected} rejected, kappa = {kappa}")
    return EXIT_OK


# -------------------------------------------------------------------- main
def _resolve_config(arg: str | None) -> nio.RunConfig:
    if arg is None:
        raise nio.ConfigError("--config is required")
    if arg.startswith("package:"):
        return nio.package_config(arg.split(":", 1)[1])
    return nio.load_config(arg)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nsmc", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="config file, or package:desk for the shipped desk problem")
            p.add_argument("--out", type=Path, help="run directory (default: [run] out)")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        return p

    common(sub.add_parser("solve", help="forward solve and field dumps"))
    common(sub.add_parser("adjoint", help="forward and adjoint solve"))
    g = common(sub.add_parser("gradcheck", help="finite-difference check of derivatives"))
    g.add_argument("--grad-tol", type=float)
    g.add_argument("--curv-tol", type=float)
    g.add_argument("--zero-direction", action="store_true")
    o = common(sub.add_parser("optimize", help="conditional gradient run"))
    o.add_argument("--checkpoint-every", type=int, default=0)
    c = common(sub.add_parser("check", help="first-order report for a run directory"), config=False)
    c.add_argument("run_dir", type=Path)
    p = common(sub.add_parser("probe", help="quadratic growth probe for a run directory"), config=False)
    p.add_argument("run_dir", type=Path)
    p.add_argument("--n", type=int)
    p.add_argument("--radius", type=float)
    return ap


def _set_threads(n: int | None) -> None:
    if not n:
        return
    try:
        import numba

        numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))
    except ImportError:  # pragma: no cover
        pass


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    _set_threads(args.threads)
    try:
        if args.command in ("check", "probe"):
            if not args.run_dir.is_dir():
                raise nio.ConfigError(f"run directory not found: {args.run_dir}")
            return (cmd_check if args.command == "check" else cmd_probe)(args.run_dir, args)
        cfg = _resolve_config(args.config)
        out = args.out or Path(cfg.get("run", "out"))
        handler = {
            "solve": cmd_solve,
            "adjoint": cmd_adjoint,
            "gradcheck": cmd_gradcheck,
            "optimize": cmd_optimize,
        }[args.command]
        return handler(cfg, out, args)
    except nio.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        step = "" if exc.step is None else f" (step {exc.step})"
        print(f"solver error{step}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
