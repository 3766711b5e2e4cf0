"""Command-line driver: ``optpot run|check-gradient|diagnose|mesh-info <config>``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checks import fd_gradient, necessary_conditions
from .fem import SolverError, build_structured_mesh
from .io import (
    ConfigError,
    parse_config,
    read_potential,
    write_history_csv,
    write_json,
    write_potential_pgm,
    write_vtk,
)
from .optimize import MultiplierError, OptimizationError, cost_gradient, run, volume
from .schrodinger import Resolvent

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2

GRADIENT_TOLERANCE = 1e-6


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage().rstrip()}")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="optpot", description="Optimal Schrodinger potentials under a volume-type constraint.")
    p.add_argument("--version", action="version", version=f"optpot {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log optimizer progress")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    r = sub.add_parser("run", help="optimize and write csv/pgm/vtk/report outputs")
    r.add_argument("config")

    c = sub.add_parser("check-gradient", help="compare adjoint and finite-difference gradients")
    c.add_argument("config")
    c.add_argument("--elements", type=int, default=20, help="number of random elements to probe")
    c.add_argument("--h", type=float, default=1e-4, help="finite-difference step")

    d = sub.add_parser("diagnose", help="optimality report for a saved potential")
    d.add_argument("config")
    d.add_argument("potential", help=".vtk written by 'run', .npy, or one value per line")
    d.add_argument("--lam", type=float, default=None, help="multiplier (estimated when omitted)")

    m = sub.add_parser("mesh-info", help="mesh counts and areas")
    m.add_argument("config")
    return p


def occupied_volumes(mesh, V, problem) -> dict:
    return {
        "constraint_value": volume(mesh, V, problem.psi),
        "thresholded_area": float(mesh.element_area[V < 0.5 * problem.vmax].sum()),
        "bound": problem.m,
    }


def estimate_multiplier(problem, mesh, V, lumped: bool, slack_tol: float) -> float:
    """Least-squares multiplier on the elements strictly inside the box; zero when the bound is slack."""
    if problem.m - volume(mesh, V, problem.psi) > slack_tol:
        return 0.0
    solver = Resolvent(mesh, lumped)
    u = solver.state(V, problem.f)
    p = solver.adjoint(V, problem.g)
    dens = cost_gradient(mesh, u, p, lumped) / mesh.element_area
    w = -problem.psi.prime(V)
    inner = (V > 0) & (V < problem.vmax)
    if not inner.any() or not np.any(w[inner] > 0):
        return 0.0
    return max(float(dens[inner] @ w[inner] / (w[inner] @ w[inner])), 0.0)


def _cmd_run(cfg) -> int:
    problem = cfg.build_problem()
    mesh = build_structured_mesh(cfg.nx, cfg.ny, problem.rect)
    result = run(problem, mesh, cfg.optimizer)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)

    report = necessary_conditions(problem, mesh, result.V, result.lam, cfg.optimizer.lumped)
    vols = occupied_volumes(mesh, result.V, problem)
    if cfg.write_csv:
        write_history_csv(result.history, out / "history.csv")
    if cfg.write_pgm:
        write_potential_pgm(mesh, result.V, problem.vmax, out / "potential.pgm")
    if cfg.write_vtk:
        write_vtk(mesh, result.u, result.p, result.V, out / "fields.vtk")
    if cfg.write_report:
        write_json({
            "status": result.status,
            "iterations": len(result.history) - 1,
            "cost": result.history[-1].cost,
            "lambda": result.lam,
            "volumes": vols,
            "optimality": report.as_dict(),
        }, out / "report.json")
    write_json({"config": cfg.describe(), "problem": problem.describe()}, out / "metadata.json")

    print(f"status: {result.status} after {len(result.history) - 1} iterations")
    print(f"cost: {result.history[-1].cost:.10g}")
    print(f"constraint value: {vols['constraint_value']:.6f} (bound {problem.m})")
    print(f"thresholded area |{{V < vmax/2}}|: {vols['thresholded_area']:.6f}")
    print(f"lambda: {result.lam:.6g}")
    print(f"stationarity (relative): {report.stationarity_relative:.3e}")
    print(f"outputs written to {out}")
    return EXIT_OK


def _cmd_check_gradient(cfg, n_elements: int, h: float) -> int:
    problem = cfg.build_problem()
    mesh = build_structured_mesh(cfg.nx, cfg.ny, problem.rect)
    rng = np.random.default_rng(cfg.optimizer.seed)
    V = rng.uniform(0.01, 0.1, mesh.n_triangles) * problem.vmax
    pool = mesh.interior_elements
    if pool.size == 0:
        raise ValueError(f"a {mesh.nx}x{mesh.ny} mesh has no element away from the boundary")
    elements = rng.choice(pool, size=min(n_elements, pool.size), replace=False)
    solver = Resolvent(mesh, cfg.optimizer.lumped, tol=1e-14)
    G = cost_gradient(mesh, solver.state(V, problem.f), solver.adjoint(V, problem.g), cfg.optimizer.lumped)
    fd = fd_gradient(problem, mesh, V, elements, h=h, lumped=cfg.optimizer.lumped)
    rel = np.abs(G[elements] - fd) / np.maximum(np.abs(fd), np.finfo(float).tiny)
    print(f"elements checked: {elements.size}")
    print(f"max relative error: {rel.max():.3e}")
    if rel.max() > GRADIENT_TOLERANCE:
        print(f"error[numerical]: gradient mismatch above {GRADIENT_TOLERANCE:g}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _cmd_diagnose(cfg, path, lam) -> int:
    problem = cfg.build_problem()
    mesh = build_structured_mesh(cfg.nx, cfg.ny, problem.rect)
    V = read_potential(path)
    V = mesh.check_elementwise(V, "potential")
    if lam is None:
        lam = estimate_multiplier(problem, mesh, V, cfg.optimizer.lumped, cfg.optimizer.bisection_tol)
    report = necessary_conditions(problem, mesh, V, lam, cfg.optimizer.lumped)
    for key, value in report.as_dict().items():
        print(f"{key}: {value}")
    for key, value in occupied_volumes(mesh, V, problem).items():
        print(f"{key}: {value}")
    return EXIT_OK


def _cmd_mesh_info(cfg) -> int:
    problem = cfg.build_problem()
    mesh = build_structured_mesh(cfg.nx, cfg.ny, problem.rect)
    print(f"nx x ny: {mesh.nx} x {mesh.ny}")
    print(f"nodes: {mesh.n_nodes}")
    print(f"triangles: {mesh.n_triangles}")
    print(f"interior nodes: {mesh.interior.size}")
    print(f"element area: {mesh.element_area[0]:.6g}")
    print(f"total area: {mesh.element_area.sum():.12g}")
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except UsageError as exc:
        print(f"error[usage]: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config)
        if args.command == "run":
            return _cmd_run(cfg)
        if args.command == "check-gradient":
            return _cmd_check_gradient(cfg, args.elements, args.h)
        if args.command == "diagnose":
            return _cmd_diagnose(cfg, args.potential, args.lam)
        return _cmd_mesh_info(cfg)
    except (SolverError, MultiplierError, OptimizationError, FloatingPointError) as exc:
        print(f"error[numerical]: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error[validation]: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
