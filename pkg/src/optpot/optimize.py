"""Projected adjoint-gradient descent for the potential under ``int Psi(V) dx <= m``.

The control is piecewise constant (one value per triangle) and boxed in
``[0, vmax]``. Each step moves ``V`` against the gradient density of the
Lagrangian ``I(V) + lam * int Psi(V)``, with ``lam`` chosen by bisection so
the new iterate meets the volume bound, and the step length is backtracked
until the cost decreases sufficiently.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .fem import Mesh, element_mass_matrices
from .problems import ProblemSpec, PsiFamily
from .schrodinger import Resolvent

__all__ = [
    "OptimizerConfig",
    "IterationRecord",
    "OptimizationResult",
    "MultiplierError",
    "OptimizationError",
    "cost_gradient",
    "volume",
    "volume_gradient",
    "update_with_multiplier",
    "line_search",
    "initial_potential",
    "run",
]

log = logging.getLogger(__name__)

MAX_DOUBLINGS = 60
MAX_BISECTIONS = 200
MAX_BACKTRACKS = 40
STALL_WINDOW = 10


class MultiplierError(RuntimeError):
    """No multiplier could bring the candidate potential under the volume bound."""


class OptimizationError(RuntimeError):
    """A numerical failure inside the descent loop, tagged with the iteration index."""

    def __init__(self, iteration: int, cause: Exception):
        super().__init__(f"iteration {iteration}: {cause}")
        self.iteration = iteration
        self.cause = cause


@dataclass(frozen=True)
class OptimizerConfig:
    max_iters: int = 2000
    cost_tolerance: float = 1e-9
    armijo_c: float = 1e-4
    eta0: float = 100.0
    eta_shrink: float = 0.5
    bisection_tol: float = 1e-7
    vmax: float = 1e4
    lumped: bool = True
    seed: int = 0
    init: str = "uniform"
    step_rule: str = "bb"

    def __post_init__(self):
        if not 0 < self.armijo_c < 1:
            raise ValueError(f"armijo_c must lie in (0, 1), got {self.armijo_c}")
        if not 0 < self.eta_shrink < 1:
            raise ValueError(f"eta_shrink must lie in (0, 1), got {self.eta_shrink}")
        if not self.vmax > 0:
            raise ValueError(f"vmax must be positive, got {self.vmax}")
        for name in ("cost_tolerance", "bisection_tol", "eta0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.step_rule not in ("bb", "expand"):
            raise ValueError(f"step_rule must be 'bb' or 'expand', got {self.step_rule!r}")
        if self.init not in ("uniform", "random"):
            raise ValueError(f"init must be 'uniform' or 'random', got {self.init!r}")


@dataclass
class IterationRecord:
    iter: int
    cost: float
    volume: float
    lam: float
    eta: float
    grad_norm: float


@dataclass
class OptimizationResult:
    V: np.ndarray
    history: list[IterationRecord]
    lam: float
    u: np.ndarray
    p: np.ndarray
    status: str
    gradient: np.ndarray = field(repr=False)

    @property
    def stalled(self) -> bool:
        return self.status == "stall"


def cost_gradient(mesh: Mesh, u, p, lumped: bool = True) -> np.ndarray:
    """Per-element derivative ``G_T`` of the discrete cost with respect to ``V_T``.

    ``G_T = u_T^T M_T p_T`` with the same element mass matrix used in the
    state operator, so ``dI . V' = sum_T G_T V'_T`` exactly. For the
    consistent mass this is ``int_T u p dx``; for the lumped mass it is the
    vertex-rule approximation of the same integral.
    """
    u = mesh.check_nodal(u, "state")
    p = mesh.check_nodal(p, "adjoint")
    M = element_mass_matrices(mesh, lumped)
    ut = u[mesh.triangles]
    pt = p[mesh.triangles]
    if lumped:
        return M[:, 0, 0] * np.einsum("ti,ti->t", ut, pt)
    return np.einsum("ti,tij,tj->t", ut, M, pt)


def volume(mesh: Mesh, V, psi: PsiFamily) -> float:
    """``int Psi(V) dx``, exact for piecewise constant ``V``."""
    V = mesh.check_elementwise(V, "potential")
    return float(psi.value(V) @ mesh.element_area)


def volume_gradient(mesh: Mesh, V, psi: PsiFamily) -> np.ndarray:
    V = mesh.check_elementwise(V, "potential")
    return psi.prime(V) * mesh.element_area


def _candidate(V, step, push, lam, vmax):
    return np.clip(V - step + lam * push, 0.0, vmax)


def update_with_multiplier(mesh: Mesh, V, G, eta: float, psi: PsiFamily, m: float,
                           cfg: OptimizerConfig):
    """Gradient step on the Lagrangian followed by the multiplier search.

    The candidate is ``clip(V - eta * (G/|T| - lam * (-Psi'(V))), 0, vmax)``.
    Returns ``(V_new, lam)`` with ``lam = 0`` if the plain step is feasible,
    otherwise a ``lam`` whose candidate volume is within ``cfg.bisection_tol``
    of ``m``.
    """
    if not eta > 0:
        raise ValueError(f"step must be positive, got {eta}")
    V = mesh.check_elementwise(V, "potential")
    G = mesh.check_elementwise(G, "gradient")
    area = mesh.element_area
    tol = cfg.bisection_tol
    step = eta * G / area
    push = eta * -psi.prime(V)

    def vol(lam):
        W = _candidate(V, step, push, lam, cfg.vmax)
        return W, float(psi.value(W) @ area)

    W, v0 = vol(0.0)
    if v0 <= m:
        return W, 0.0

    wmax = push.max()
    if not wmax > 0:
        raise MultiplierError("volume is insensitive to the multiplier (Psi' vanishes everywhere)")
    lo = 0.0
    hi = max(np.abs(step).max(), cfg.vmax) / wmax
    for _ in range(MAX_DOUBLINGS):
        W_hi, v_hi = vol(hi)
        if v_hi <= m:
            break
        lo = hi
        hi *= 2.0
    else:
        raise MultiplierError(f"no bracketing multiplier after {MAX_DOUBLINGS} doublings "
                              f"(volume {v_hi:.6g} > bound {m:.6g})")
    # bisect to the smallest multiplier meeting the bound, not merely into the
    # tolerance window: a loose window makes the volume jitter between steps
    for _ in range(MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi or hi - lo <= 1e-15 * hi:
            break
        W_mid, v_mid = vol(mid)
        if v_mid > m:
            lo = mid
        else:
            hi, W_hi, v_hi = mid, W_mid, v_mid
    if abs(v_hi - m) > tol and v_hi > m:
        raise MultiplierError(f"bisection ended at volume {v_hi:.12g}, outside {m} +/- {tol}")
    return W_hi, hi


def _predicted_decrease(G, V, W) -> float:
    return float(G @ (V - W))


def line_search(problem: ProblemSpec, solver: Resolvent, V, G, cost_now: float,
                cfg: OptimizerConfig, eta_init: float, u_guess=None):
    """Backtracking on the projected path.

    Returns ``(V_new, eta, lam, cost_new, u_new, stalled)``. When no trial
    within ``MAX_BACKTRACKS`` reductions gives sufficient decrease the input
    potential is returned unchanged with ``stalled = True``.
    """
    mesh = solver.mesh
    eta = eta_init
    if not np.any(G) or not eta > 0:
        return V, 0.0, 0.0, cost_now, u_guess, True
    for _ in range(MAX_BACKTRACKS + 1):
        W, lam = update_with_multiplier(mesh, V, G, eta, problem.psi, problem.m, cfg)
        pred = _predicted_decrease(G, V, W)
        if np.array_equal(W, V):
            eta *= cfg.eta_shrink
            continue
        u = solver.state(W, problem.f, x0=u_guess)
        c = solver.cost(problem.g, u)
        if c <= cost_now - cfg.armijo_c * pred and c <= cost_now:
            return W, eta, lam, c, u, False
        eta *= cfg.eta_shrink
    return V, 0.0, 0.0, cost_now, u_guess, True


def initial_potential(mesh: Mesh, problem: ProblemSpec, cfg: OptimizerConfig) -> np.ndarray:
    """Uniform ``Psi^{-1}(m/|D|)`` (saturating the bound), or seeded uniform noise in the box."""
    if cfg.init == "random":
        rng = np.random.default_rng(cfg.seed)
        return rng.uniform(0.0, cfg.vmax, mesh.n_triangles)
    level = problem.m / mesh.area
    if problem.psi.kind == "exponential" and level >= 1.0:
        v = 0.0
    else:
        v = float(problem.psi.inverse(level))
    return np.full(mesh.n_triangles, min(max(v, 0.0), cfg.vmax))


def _bb_step(V, V_new, G, G_new, lam, psi, area):
    """Barzilai-Borwein step from the change in the Lagrangian gradient density."""
    s = V_new - V
    y = (G_new - G) / area - lam * (psi.prime(V) - psi.prime(V_new))
    sy = float(np.sum(s * y * area))
    if not sy > 0:
        return None
    return float(np.sum(s * s * area)) / sy


def _grad_norm(mesh: Mesh, G) -> float:
    return float(np.sqrt(np.sum(G**2 / mesh.element_area)))


def run(problem: ProblemSpec, mesh: Mesh, cfg: OptimizerConfig | None = None, V0=None,
        callback=None) -> OptimizationResult:
    """Minimize ``int g u dx`` over admissible potentials starting from ``V0``.

    Stops when the relative cost decrease stays below ``cfg.cost_tolerance``
    for ten consecutive iterations, when the line search stalls, or after
    ``cfg.max_iters`` iterations (status ``"converged"``, ``"stall"`` or
    ``"max_iters"``).
    """
    cfg = cfg or OptimizerConfig(vmax=problem.vmax)
    if cfg.vmax != problem.vmax:
        problem = problem.with_overrides(vmax=cfg.vmax)
    solver = Resolvent(mesh, cfg.lumped)
    psi, m = problem.psi, problem.m

    if V0 is None:
        V = initial_potential(mesh, problem, cfg)
    else:
        V = mesh.check_elementwise(V0, "initial potential")
        if not np.all(np.isfinite(V)):
            raise ValueError("initial potential must be finite")
        V = np.clip(V, 0.0, cfg.vmax)
    lam = 0.0
    if volume(mesh, V, psi) > m + cfg.bisection_tol:
        V, lam = update_with_multiplier(mesh, V, np.zeros_like(V), 1.0, psi, m, cfg)

    it = 0
    try:
        u = solver.state(V, problem.f)
        p = solver.adjoint(V, problem.g)
        I = solver.cost(problem.g, u)
        G = cost_gradient(mesh, u, p, cfg.lumped)
        history = [IterationRecord(0, I, volume(mesh, V, psi), lam, 0.0, _grad_norm(mesh, G))]
        status = "max_iters"
        slow = 0
        eta_prev = None
        eta_bb = None
        area = mesh.element_area
        for it in range(1, cfg.max_iters + 1):
            dens = np.abs(G / area).max()
            if dens == 0.0:
                status = "stall"
                break
            eta_cap = cfg.eta0 * cfg.vmax / dens
            if eta_prev is None:
                eta_init = eta_cap
            elif eta_bb is not None:
                eta_init = min(eta_cap, eta_bb)
            else:
                eta_init = min(eta_cap, eta_prev / cfg.eta_shrink)
            V_new, eta, lam_new, I_new, u_new, stalled = line_search(
                problem, solver, V, G, I, cfg, eta_init, u_guess=u)
            if stalled:
                status = "stall"
                break
            rel = (I - I_new) / max(abs(I), np.finfo(float).tiny)
            p = solver.adjoint(V_new, problem.g, x0=p)
            G_new = cost_gradient(mesh, u_new, p, cfg.lumped)
            if cfg.step_rule == "bb":
                eta_bb = _bb_step(V, V_new, G, G_new, lam_new, psi, area)
            V, I, u, lam, eta_prev, G = V_new, I_new, u_new, lam_new, eta, G_new
            rec = IterationRecord(it, I, volume(mesh, V, psi), lam, eta, _grad_norm(mesh, G))
            history.append(rec)
            if callback is not None:
                callback(rec, V)
            slow = slow + 1 if rel < cfg.cost_tolerance else 0
            if slow >= STALL_WINDOW:
                status = "converged"
                break
    except (RuntimeError, ValueError) as exc:
        raise OptimizationError(it, exc) from exc
    log.info("%s after %d iterations: cost=%.8g volume=%.6g lambda=%.4g",
             status, len(history) - 1, I, history[-1].volume, lam)
    return OptimizationResult(V, history, lam, u, p, status, G)


def history_as_dicts(history) -> list[dict]:
    return [asdict(r) for r in history]
