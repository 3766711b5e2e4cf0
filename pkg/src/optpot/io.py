"""Run configuration files and byte-deterministic output writers."""
from __future__ import annotations

import configparser
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .fem import Mesh
from .optimize import IterationRecord, OptimizerConfig
from .problems import BUILTIN_NAMES, Cross, ProblemSpec, PsiFamily, builtin_problem

__all__ = [
    "ConfigError",
    "RunConfig",
    "OUTPUT_DIR_ENV",
    "parse_config",
    "write_history_csv",
    "read_history_csv",
    "write_vtk",
    "read_vtk_potential",
    "read_potential",
    "write_potential_pgm",
    "write_json",
]

OUTPUT_DIR_ENV = "OPTPOT_OUTPUT_DIR"
HISTORY_HEADER = "iter,cost,volume,lambda,eta,grad_norm"


class ConfigError(ValueError):
    """Invalid or unreadable run configuration."""


@dataclass
class RunConfig:
    problem: str
    overrides: dict = field(default_factory=dict)
    nx: int = 100
    ny: int = 100
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    output_dir: Path = Path("output")
    write_vtk: bool = True
    write_pgm: bool = True
    write_csv: bool = True
    write_report: bool = True

    def build_problem(self) -> ProblemSpec:
        return builtin_problem(self.problem, **self.overrides)

    def describe(self) -> dict:
        over = {}
        for k, v in self.overrides.items():
            if isinstance(v, Cross):
                v = v.describe()
            elif isinstance(v, PsiFamily):
                v = {"kind": v.kind, "param": v.param}
            over[k] = v
        return {
            "problem": self.problem,
            "overrides": over,
            "mesh": {"nx": self.nx, "ny": self.ny},
            "optimizer": asdict(self.optimizer),
            "output": {"directory": str(self.output_dir), "vtk": self.write_vtk, "pgm": self.write_pgm,
                       "csv": self.write_csv, "report": self.write_report},
        }


def _float(text):
    return float(text)


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise ValueError("must be a positive integer")
    return v


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _interval(text):
    parts = [p for p in text.replace(",", " ").split()]
    if len(parts) != 2:
        raise ValueError("expected two numbers 'lo, hi'")
    return (float(parts[0]), float(parts[1]))


_PROBLEM_KEYS = {
    "name": str,
    "m": _float,
    "alpha": _float,
    "vmax": _float,
    "psi": str,
    "psi_exponent": _float,
    "cross_h_x": _interval,
    "cross_h_y": _interval,
    "cross_v_x": _interval,
    "cross_v_y": _interval,
}
_MESH_KEYS = {"nx": _positive_int, "ny": _positive_int}
_OPTIMIZER_KEYS = {
    "max_iters": int,
    "cost_tolerance": _float,
    "armijo_c": _float,
    "eta0": _float,
    "eta_shrink": _float,
    "bisection_tol": _float,
    "lumped": _bool,
    "seed": int,
    "init": str,
    "step_rule": str,
}
_OUTPUT_KEYS = {"directory": str, "vtk": _bool, "pgm": _bool, "csv": _bool, "report": _bool}
_SECTIONS = {"problem": _PROBLEM_KEYS, "mesh": _MESH_KEYS, "optimizer": _OPTIMIZER_KEYS, "output": _OUTPUT_KEYS}


def parse_config(path) -> RunConfig:
    """Read an INI-style run file with ``[problem]``, ``[mesh]``, ``[optimizer]`` and ``[output]``.

    Every key is validated; unknown sections or keys are rejected.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#",),
                                   interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from None

    values: dict[str, dict] = {name: {} for name in _SECTIONS}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        schema = _SECTIONS[section]
        for key, raw in cp.items(section):
            if key not in schema:
                raise ConfigError(f"{path}: unknown key '{key}' in [{section}]")
            try:
                values[section][key] = schema[key](raw.strip())
            except ValueError as exc:
                raise ConfigError(f"{path}: invalid value for '{key}' in [{section}]: {exc}") from None

    prob = values["problem"]
    if "name" not in prob:
        raise ConfigError(f"{path}: [problem] requires 'name'")
    name = prob["name"]
    if name not in BUILTIN_NAMES:
        raise ConfigError(f"{path}: unknown problem name '{name}' (choose from {', '.join(BUILTIN_NAMES)})")

    overrides: dict = {}
    for key in ("m", "alpha", "vmax"):
        if key in prob:
            overrides[key] = prob[key]
    kind = prob.get("psi", "exponential")
    if kind == "power":
        if "psi_exponent" not in prob:
            raise ConfigError(f"{path}: psi = power requires 'psi_exponent'")
        try:
            overrides["psi"] = PsiFamily("power", prob["psi_exponent"])
        except ValueError as exc:
            raise ConfigError(f"{path}: invalid value for 'psi_exponent': {exc}") from None
    elif kind != "exponential":
        raise ConfigError(f"{path}: invalid value for 'psi': {kind!r}")
    cross_keys = {k[6:]: v for k, v in prob.items() if k.startswith("cross_")}
    if cross_keys:
        try:
            overrides["cross"] = Cross(**{**asdict(Cross()), **cross_keys})
        except ValueError as exc:
            raise ConfigError(f"{path}: invalid cross geometry: {exc}") from None

    opt = dict(values["optimizer"])
    try:
        problem = builtin_problem(name, **overrides)
        optimizer = OptimizerConfig(vmax=problem.vmax, **opt)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None

    out = values["output"]
    default_dir = os.environ.get(OUTPUT_DIR_ENV, "output")
    return RunConfig(
        problem=name,
        overrides=overrides,
        nx=values["mesh"].get("nx", 100),
        ny=values["mesh"].get("ny", 100),
        optimizer=optimizer,
        output_dir=Path(out.get("directory", default_dir)),
        write_vtk=out.get("vtk", True),
        write_pgm=out.get("pgm", True),
        write_csv=out.get("csv", True),
        write_report=out.get("report", True),
    )


def _num(x) -> str:
    # repr of a Python float is the shortest string that round-trips
    return repr(float(x))


def write_history_csv(records, path) -> None:
    lines = [HISTORY_HEADER]
    for r in records:
        lines.append(",".join([str(int(r.iter)), _num(r.cost), _num(r.volume), _num(r.lam),
                               _num(r.eta), _num(r.grad_norm)]))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_history_csv(path) -> list[IterationRecord]:
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != HISTORY_HEADER:
            raise ValueError(f"unexpected history header {header!r}")
        out = []
        for line in fh:
            it, c, v, lam, eta, gn = line.rstrip("\n").split(",")
            out.append(IterationRecord(int(it), float(c), float(v), float(lam), float(eta), float(gn)))
    return out


def _block(values, per_line: int = 1) -> str:
    arr = np.asarray(values, dtype=float).reshape(-1, per_line)
    return "\n".join(" ".join(_num(x) for x in row) for row in arr)


def write_vtk(mesh: Mesh, u, p, V, path, title: str = "optpot fields") -> None:
    """Legacy ASCII VTK: triangles as cell type 5, nodal ``state``/``adjoint``, element ``potential``."""
    u = mesh.check_nodal(u, "state")
    p = mesh.check_nodal(p, "adjoint")
    V = mesh.check_elementwise(V, "potential")
    n, t = mesh.n_nodes, mesh.n_triangles
    pts = np.column_stack([mesh.nodes, np.zeros(n)])
    cells = "\n".join(f"3 {a} {b} {c}" for a, b, c in mesh.triangles.tolist())
    parts = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n} double",
        _block(pts, 3),
        f"CELLS {t} {4 * t}",
        cells,
        f"CELL_TYPES {t}",
        "\n".join(["5"] * t),
        f"POINT_DATA {n}",
        "SCALARS state double 1",
        "LOOKUP_TABLE default",
        _block(u),
        "SCALARS adjoint double 1",
        "LOOKUP_TABLE default",
        _block(p),
        f"CELL_DATA {t}",
        "SCALARS potential double 1",
        "LOOKUP_TABLE default",
        _block(V),
    ]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")


def read_vtk_potential(path) -> np.ndarray:
    """Extract the ``potential`` cell scalars from a file written by :func:`write_vtk`."""
    tokens = Path(path).read_text().split("\n")
    try:
        start = tokens.index("SCALARS potential double 1")
    except ValueError:
        raise ValueError(f"{path}: no 'potential' cell scalars found") from None
    count = None
    for line in tokens[:start]:
        if line.startswith("CELL_DATA"):
            count = int(line.split()[1])
    if count is None:
        raise ValueError(f"{path}: missing CELL_DATA section")
    body = tokens[start + 2:start + 2 + count]
    return np.array([float(x) for x in body])


def read_potential(path) -> np.ndarray:
    """Load a potential from ``.vtk``, ``.npy`` or a plain one-value-per-line text file."""
    path = Path(path)
    if not path.is_file():
        raise ValueError(f"potential file not found: {path}")
    if path.suffix == ".vtk":
        return read_vtk_potential(path)
    if path.suffix == ".npy":
        return np.load(path)
    return np.loadtxt(path, dtype=float, ndmin=1)


def potential_raster(mesh: Mesh, V, vmax: float) -> np.ndarray:
    """8-bit grayscale raster, top row first; black is 0 and white is ``vmax``."""
    V = mesh.check_elementwise(V, "potential")
    cell = V.reshape(mesh.ny, mesh.nx, 2).mean(axis=2)
    level = np.clip(cell / vmax, 0.0, 1.0)
    pix = np.floor(255.0 * level + 0.5).astype(np.uint8)
    return pix[::-1]


def write_potential_pgm(mesh: Mesh, V, vmax: float, path) -> None:
    pix = potential_raster(mesh, V, vmax)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{mesh.nx} {mesh.ny}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    header = []
    pos = 0
    while len(header) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        header.append(data[pos:end])
        pos = end
    # exactly one whitespace byte separates maxval from the raster
    pos += 1
    if header[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = (int(x) for x in header[1:])
    if maxval != 255:
        raise ValueError("only 8-bit PGM supported")
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(obj, path) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")

