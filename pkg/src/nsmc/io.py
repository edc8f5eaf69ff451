"""Run configuration, NSMC1 field dumps, CSV tables and run manifests."""
from __future__ import annotations

import configparser
import csv
import hashlib
import json
import platform
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"NSMC1\0"
_HEADER = struct.Struct("<QQQ")


class ConfigError(ValueError):
    """Invalid or incomplete run configuration (CLI exit code 2)."""


# --------------------------------------------------------------------- NSMC1
def write_nsmc1(path, arr: np.ndarray) -> None:
    """Magic, little-endian u64 (nt+1, rows, cols), row-major float64 payload."""
    a = np.asarray(arr, dtype=float)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise ValueError(f"NSMC1 holds 3-d arrays, got shape {a.shape}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(*a.shape))
        fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_nsmc1(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not an NSMC1 file")
    off = len(MAGIC)
    shape = _HEADER.unpack_from(raw, off)
    off += _HEADER.size
    count = shape[0] * shape[1] * shape[2]
    if len(raw) - off != 8 * count:
        raise ValueError(f"{path}: payload has {len(raw) - off} bytes, header implies {8 * count}")
    return np.frombuffer(raw, dtype="<f8", count=count, offset=off).astype(float).reshape(shape)


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ----------------------------------------------------------------------- CSV
def fmt(x: float) -> str:
    return f"{x:.17g}"


def write_table(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for r in rows:
            wr.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


def write_psi_csv(path, adj) -> None:
    """t_n, psi_1, psi_2 and the argmax node coordinates per component."""
    g = adj.grid
    rows = []
    for n in range(adj.nt + 1):
        x1, y1 = g.node_position(1, *adj.argmax[n, 0]) if adj.psi[n, 0] > 0 else (float("nan"),) * 2
        x2, y2 = g.node_position(2, *adj.argmax[n, 1]) if adj.psi[n, 1] > 0 else (float("nan"),) * 2
        rows.append([n * adj.dt, adj.psi[n, 0], adj.psi[n, 1], x1, y1, x2, y2])
    write_table(path, ["t", "psi_1", "psi_2", "x_1", "y_1", "x_2", "y_2"], rows)


def write_slice_csv(path, traj, component: int, row: int | None = None) -> None:
    """Mid-row slice of one velocity component for every snapshot."""
    ux, uy = traj.full_arrays()
    a = ux if component == 1 else uy
    r = a.shape[1] // 2 if row is None else row
    g = traj.grid
    xs = g.x1 if component == 1 else g.x2
    rows = [[n * traj.params.dt, float(xs[r]), *a[n, r, :]] for n in range(a.shape[0])]
    write_table(path, ["t", "x"] + [f"v{j}" for j in range(a.shape[2])], rows)


# -------------------------------------------------------------------- config
DEFAULTS = {
    "grid": {"nx": "32", "ny": "32", "lx": "1.0", "ly": "1.0", "omega": "0.25, 0.75, 0.25, 0.75"},
    "solver": {"nu": "0.05", "T": "1.0", "nt": "64", "picard_max": "60", "picard_tol": "1e-12"},
    "problem": {"gamma": "1.0", "y0": "zero", "f0": "zero", "yd": "zero", "control": "zero"},
    "optimizer": {
        "max_iter": "200",
        "step_rule": "armijo",
        "armijo_c": "1e-4",
        "armijo_shrink": "0.5",
        "stop_tol": "1e-10",
        "prune_tol": "1e-12",
        "model_step": "true",
    },
    "check": {"tau": "1e-2", "n_dirs": "0"},
    "probe": {"n_samples": "100", "radius": "0.05"},
    "gradcheck": {"pairs": "1", "grad_tol": "1e-5", "curv_tol": "1e-3"},
    "run": {"seed": "0", "out": "run"},
}


@dataclass
class RunConfig:
    sections: dict  # echo of every key, as strings
    base_dir: Path
    source: str = "<memory>"
    derived: dict = field(default_factory=dict)

    def get(self, section: str, key: str) -> str:
        try:
            return self.sections[section][key]
        except KeyError:
            raise ConfigError(f"missing [{section}] {key}") from None

    def getfloat(self, section, key) -> float:
        v = self.get(section, key)
        try:
            return float(v)
        except ValueError:
            raise ConfigError(f"[{section}] {key} = {v!r} is not a number") from None

    def getint(self, section, key) -> int:
        v = self.get(section, key)
        try:
            return int(v)
        except ValueError:
            raise ConfigError(f"[{section}] {key} = {v!r} is not an integer") from None

    def getbool(self, section, key) -> bool:
        v = self.get(section, key).strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{section}] {key} = {v!r} is not a boolean")

    def path(self, section: str, key: str) -> Path:
        p = Path(self.get(section, key))
        if not p.is_absolute():
            p = self.base_dir / p
        if not p.exists():
            raise ConfigError(f"[{section}] {key}: file not found: {p}")
        return p

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for sec in sorted(self.sections):
            cp[sec] = dict(sorted(self.sections[sec].items()))
        from io import StringIO

        buf = StringIO()
        cp.write(buf)
        return buf.getvalue()


def parse_config(text: str, base_dir=".", source: str = "<memory>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    sections = {s: dict(v) for s, v in DEFAULTS.items()}
    for sec in cp.sections():
        if sec not in DEFAULTS:
            raise ConfigError(f"{source}: unknown section [{sec}]")
        for k, v in cp[sec].items():
            sections[sec][k] = v
    return RunConfig(sections, Path(base_dir).resolve(), source)


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(), p.parent, str(p))


def package_config(name: str = "desk") -> RunConfig:
    """Configuration shipped inside the package (``nsmc/data/<name>.cfg``)."""
    from importlib.resources import files

    res = files("nsmc") / "data" / f"{name}.cfg"
    if not res.is_file():
        raise ConfigError(f"no packaged config named {name!r}")
    return parse_config(res.read_text(), ".", f"nsmc/data/{name}.cfg")


def parse_floats(text: str, n: int | None = None) -> list[float]:
    try:
        vals = [float(t) for t in text.replace(";", ",").split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse numbers from {text!r}") from None
    if n is not None and len(vals) != n:
        raise ConfigError(f"expected {n} numbers, got {len(vals)} in {text!r}")
    return vals


def parse_atoms(text: str) -> list[tuple[int, float, float, float]]:
    """``component, x, y, weight`` groups separated by ``;``."""
    atoms = []
    for group in text.split(";"):
        if not group.strip():
            continue
        vals = parse_floats(group, 4)
        if vals[0] not in (1.0, 2.0):
            raise ConfigError(f"atom component must be 1 or 2 in {group!r}")
        atoms.append((int(vals[0]), vals[1], vals[2], vals[3]))
    return atoms


# ------------------------------------------------------------------ manifest
def versions() -> dict:
    import scipy

    from . import __version__
    from ._accel import USE_NUMBA

    out = {
        "nsmc": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba_enabled": USE_NUMBA,
    }
    try:
        import numba

        out["numba"] = numba.__version__
    except ImportError:  # pragma: no cover
        out["numba"] = None
    return out


def write_manifest(run_dir, config: RunConfig, command: str, extra: dict | None = None) -> dict:
    run_dir = Path(run_dir)
    files = {}
    for p in sorted(run_dir.iterdir()):
        if p.is_file() and p.name != "manifest.json":
            files[p.name] = sha256(p)
    man = {
        "command": command,
        "config": {s: dict(sorted(v.items())) for s, v in sorted(config.sections.items())},
        "config_source": config.source,
        "derived": config.derived,
        "files": files,
        "versions": versions(),
    }
    if extra:
        man.update(extra)
    (run_dir / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return man


def read_manifest(run_dir) -> dict:
    p = Path(run_dir) / "manifest.json"
    if not p.is_file():
        raise ConfigError(f"no manifest in {run_dir}")
    return json.loads(p.read_text())


def config_from_manifest(run_dir) -> RunConfig:
    man = read_manifest(run_dir)
    cfg = RunConfig({s: dict(v) for s, v in man["config"].items()}, Path(run_dir).resolve(), str(run_dir))
    return cfg
