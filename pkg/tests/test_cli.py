import csv
import json

import numpy as np
import pytest

from nsmc import io as nio
from nsmc.cli import main

SMALL = """
[grid]
nx = 10
ny = 10
[solver]
nt = 4
T = 0.2
[problem]
yd = reference
reference_atoms = 1, 0.4, 0.4, 1.5; 2, 0.6, 0.6, -1.5
[optimizer]
max_iter = 6
[probe]
n_samples = 4
[check]
n_dirs = 2
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return p


def run(*args):
    return main([str(a) for a in args])


def test_solve_artifacts(cfg, tmp_path):
    out = tmp_path / "solve"
    assert run("solve", "--config", cfg, "--out", out) == 0
    ux = nio.read_nsmc1(out / "ux.nsmc")
    assert ux.shape == (5, 11, 10)
    assert nio.read_nsmc1(out / "p.nsmc").shape == (5, 10, 10)
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "solve" and man["config"]["grid"]["nx"] == "10"
    assert man["derived"]["dt"] == pytest.approx(0.05)
    assert man["files"]["ux.nsmc"] == nio.sha256(out / "ux.nsmc")


def test_target_from_files(cfg, tmp_path):
    # target = zero-control state written by a previous solve, so J = 0
    zero = tmp_path / "zero.cfg"
    zero.write_text(SMALL.replace("yd = reference", "yd = zero"))
    assert run("solve", "--config", zero, "--out", tmp_path / "a") == 0
    filecfg = tmp_path / "file.cfg"
    filecfg.write_text(
        SMALL.replace("yd = reference", f"yd = file\nyd_ux = {tmp_path / 'a' / 'ux.nsmc'}\nyd_uy = {tmp_path / 'a' / 'uy.nsmc'}")
    )
    out = tmp_path / "b"
    assert run("solve", "--config", filecfg, "--out", out) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["J"] == 0.0
    assert (out / "inputs" / "ux.nsmc").is_file()


def test_adjoint_artifacts(cfg, tmp_path):
    out = tmp_path / "adj"
    assert run("adjoint", "--config", cfg, "--out", out) == 0
    assert nio.read_nsmc1(out / "phi_ux.nsmc").shape == (5, 11, 10)
    rows = list(csv.reader(open(out / "psi.csv")))
    assert rows[0] == ["t", "psi_1", "psi_2", "x_1", "y_1", "x_2", "y_2"] and len(rows) == 6


def test_config_errors_exit_2(tmp_path, capsys):
    assert run("solve", "--config", tmp_path / "missing.cfg") == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("[problem]\ny0 = file\ny0_ux = nowhere.nsmc\ny0_uy = nowhere.nsmc\n")
    assert run("solve", "--config", bad, "--out", tmp_path / "o") == 2
    assert "nowhere.nsmc" in capsys.readouterr().err
    assert run("check", tmp_path / "no_run") == 2


def test_solver_failure_exit_3(tmp_path, capsys):
    p = tmp_path / "s.cfg"
    p.write_text(SMALL.replace("T = 0.2", "T = 0.2\npicard_max = 1"))
    assert run("solve", "--config", p, "--out", tmp_path / "o") == 3
    assert "step" in capsys.readouterr().err


def test_gradcheck_exit_codes(cfg, tmp_path):
    out = tmp_path / "gc"
    assert run("gradcheck", "--config", cfg, "--out", out, "--seed", 3) == 0
    rep = json.loads((out / "gradcheck.json").read_text())
    assert rep["passed"] and rep["seed"] == 3
    assert run("gradcheck", "--config", cfg, "--out", tmp_path / "gc2", "--grad-tol", "1e-30") == 4
    assert run("gradcheck", "--config", cfg, "--out", tmp_path / "gc3", "--zero-direction") == 0


def test_optimize_check_probe(cfg, tmp_path):
    out = tmp_path / "opt"
    assert run("optimize", "--config", cfg, "--out", out, "--checkpoint-every", 3) == 0
    for name in ("control.csv", "iterate_log.csv", "psi.csv", "ux.nsmc", "manifest.json"):
        assert (out / name).is_file()
    assert sorted(p.name for p in (out / "checkpoints").iterdir()) == ["control_0000.csv", "control_0003.csv", "control_0006.csv"]
    log = list(csv.DictReader(open(out / "iterate_log.csv")))
    J = np.array([float(r["J"]) for r in log])
    assert np.all(np.diff(J) <= 0)

    assert run("check", out) == 0
    rep = json.loads((out / "check_report.json").read_text())
    assert rep["gamma"] == 1.0 and "second_order" in rep
    assert rep["J"] == pytest.approx(J[-1], rel=1e-12)

    assert run("probe", out, "--seed", 5) == 0
    first = (out / "probe_report.json").read_bytes()
    assert run("probe", out, "--seed", 5) == 0
    assert (out / "probe_report.json").read_bytes() == first
    assert run("probe", out, "--n", 0) == 0
    assert json.loads((out / "probe_report.json").read_text())["kappa"] is None


def test_infeasible_initial_control_exit_2(cfg, tmp_path):
    ctrl = tmp_path / "u.csv"
    ctrl.write_text("t_index,component,x,y,weight\n0,1,0.5,0.5,2.0\n")
    p = tmp_path / "c.cfg"
    p.write_text(SMALL.replace("yd = reference", f"yd = reference\ncontrol = file\ncontrol_csv = {ctrl}"))
    assert run("optimize", "--config", p, "--out", tmp_path / "o") == 2


def test_mms_recipe(tmp_path):
    p = tmp_path / "m.cfg"
    p.write_text("[grid]\nnx = 8\nny = 8\n[solver]\nnt = 4\nT = 0.2\n[problem]\nyd = mms\n")
    out = tmp_path / "mms"
    assert run("solve", "--config", p, "--out", out) == 0
    rows = list(csv.DictReader(open(out / "mms_convergence.csv")))
    space = [float(r["order"]) for r in rows if r["kind"] == "space" and r["order"] != "nan"]
    time_ = [float(r["order"]) for r in rows if r["kind"] == "time" and r["order"] != "nan"]
    assert min(space) >= 1.9 and min(time_) >= 0.9
