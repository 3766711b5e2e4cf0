"""Independent oracles and a-posteriori optimality diagnostics.

Nothing here reuses the optimizer's gradient: finite differences go through
fresh state solves, and the optimality report recomputes ``u`` and ``p``
from scratch for the potential it is given.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .fem import Mesh, element_mass_matrices
from .optimize import cost_gradient, volume
from .problems import ProblemSpec
from .schrodinger import Resolvent

__all__ = [
    "OptimalityReport",
    "fd_gradient",
    "check_self_adjoint",
    "check_lemma1",
    "check_monotone_at_optimum",
    "necessary_conditions",
]

# finite differences subtract two nearly equal costs, so the solves must be
# far tighter than the optimizer's
FD_SOLVER_TOL = 1e-14


def fd_gradient(problem: ProblemSpec, mesh: Mesh, V, elements, h: float = 1e-4,
                lumped: bool = True) -> np.ndarray:
    """Central differences ``(I(V + h e_T) - I(V - h e_T)) / 2h`` for each listed element.

    Subtracting the two costs loses every digit the gradient shares with
    them, which ruins relative accuracy wherever ``u p`` changes sign. The
    state difference is formed instead from the exact identity
    ``u+ - u- = -R_{V+h}(2h M_T u-)``, with ``M_T`` the element mass matrix,
    so the quotient is the same secant without the cancellation. Each
    element costs two fresh solves and never touches the adjoint.
    """
    V = mesh.check_elementwise(V, "potential")
    elements = np.atleast_1d(np.asarray(elements, dtype=int))
    lo, hi = V[elements] - h, V[elements] + h
    if np.any(lo <= 0) or np.any(hi >= problem.vmax):
        raise ValueError("perturbed potential leaves (0, vmax); choose elements with interior values")
    solver = Resolvent(mesh, lumped, tol=FD_SOLVER_TOL)
    local = element_mass_matrices(mesh, lumped)
    out = np.empty(elements.size)
    for k, T in enumerate(elements):
        nodes = mesh.triangles[T]
        W = V.copy()
        W[T] -= h
        u_minus = solver.state(W, problem.f)
        rhs = np.zeros(mesh.n_nodes)
        rhs[nodes] = -2.0 * h * (local[T] @ u_minus[nodes])
        W[T] += 2.0 * h
        out[k] = solver.cost(problem.g, solver.solve(W, rhs)) / (2.0 * h)
    return out


def check_self_adjoint(mesh: Mesh, V, f, g, lumped: bool = True, relative: bool = False) -> float:
    """``|int g R_V(f) - int f R_V(g)|``.

    With ``relative=True`` the discrepancy is divided by
    ``sqrt(<f, R_V f> <g, R_V g>)``, the Cauchy-Schwarz bound on either pairing.
    """
    solver = Resolvent(mesh, lumped)
    uf = solver.state(V, f)
    ug = solver.state(V, g)
    gap = abs(solver.cost(g, uf) - solver.cost(f, ug))
    if not relative:
        return gap
    scale = np.sqrt(abs(solver.cost(f, uf) * solver.cost(g, ug)))
    return gap / scale if scale > 0 else gap


def _centroid_values(mesh: Mesh, nodal) -> np.ndarray:
    return nodal[mesh.triangles].mean(axis=1)


def check_lemma1(mesh: Mesh, V, f, g, lumped: bool = True) -> float:
    """Largest value of ``R_V(g) * R_V(f)`` over the element centroids."""
    solver = Resolvent(mesh, lumped)
    prod = _centroid_values(mesh, solver.state(V, g)) * _centroid_values(mesh, solver.state(V, f))
    return float(prod.max())


def check_monotone_at_optimum(problem: ProblemSpec, mesh: Mesh, V_opt, scales, lumped: bool = True):
    """Costs at ``s * V_opt`` for each scale ``s``.

    At an optimum with ``g >= 0`` none of them should exceed the cost at ``V_opt``.
    """
    V_opt = mesh.check_elementwise(V_opt, "potential")
    solver = Resolvent(mesh, lumped)
    return [solver.cost(problem.g, solver.state(s * V_opt, problem.f)) for s in scales]


@dataclass
class OptimalityReport:
    stationarity_residual_interior: float
    sign_violation_lower: float
    sign_violation_upper: float
    lemma1_max: float
    constraint_slack: float
    lam: float
    # normalizations used by the relative checks
    gradient_scale: float
    lemma1_scale: float
    n_interior: int
    # only populated when lam == 0 and g >= 0
    unsaturated_u_abs_on_positive: float | None = None
    unsaturated_u_max_on_zero: float | None = None

    @property
    def stationarity_relative(self) -> float:
        return _ratio(self.stationarity_residual_interior, self.gradient_scale)

    @property
    def lemma1_relative(self) -> float:
        return _ratio(self.lemma1_max, self.lemma1_scale)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["stationarity_relative"] = self.stationarity_relative
        d["lemma1_relative"] = self.lemma1_relative
        return d


def _ratio(a, b):
    return a / b if b > 0 else a


def necessary_conditions(problem: ProblemSpec, mesh: Mesh, V, lam: float, lumped: bool = True,
                         elements=None) -> OptimalityReport:
    """First-order optimality diagnostics for a potential and its multiplier.

    The density ``d_T = G_T / |T|`` of the discrete cost gradient is compared
    with ``lam * (-Psi'(V_T))``: equality is required where ``0 < V_T < vmax``,
    ``d_T >= lam * (-Psi')`` where ``V_T = 0`` and ``<=`` where ``V_T = vmax``.
    ``elements`` restricts the element-wise residuals to a subset.
    """
    V = mesh.check_elementwise(V, "potential")
    solver = Resolvent(mesh, lumped)
    u = solver.state(V, problem.f)
    p = solver.adjoint(V, problem.g)
    dens = cost_gradient(mesh, u, p, lumped) / mesh.element_area
    push = lam * -problem.psi.prime(V)
    resid = dens - push

    sel = np.ones(mesh.n_triangles, dtype=bool)
    if elements is not None:
        sel[:] = False
        sel[np.asarray(elements)] = True
    at_zero = sel & (V <= 0.0)
    at_top = sel & (V >= problem.vmax)
    inner = sel & ~at_zero & ~at_top

    uc = _centroid_values(mesh, u)
    pc = _centroid_values(mesh, p)
    # R_V(g) = -p
    lemma1 = float((-pc * uc).max())

    report = OptimalityReport(
        stationarity_residual_interior=float(np.abs(resid[inner]).max(initial=0.0)),
        sign_violation_lower=float(np.maximum(-resid[at_zero], 0.0).max(initial=0.0)),
        sign_violation_upper=float(np.maximum(resid[at_top], 0.0).max(initial=0.0)),
        lemma1_max=lemma1,
        constraint_slack=problem.m - volume(mesh, V, problem.psi),
        lam=float(lam),
        gradient_scale=float(np.abs(dens).max()),
        lemma1_scale=float(np.abs(u).max() * np.abs(p).max()),
        n_interior=int(inner.sum()),
    )
    mid = mesh.edge_midpoints
    g_nonneg = bool(np.all(np.asarray(problem.g(mid[..., 0], mid[..., 1])) >= 0))
    if lam == 0 and g_nonneg:
        pos = sel & (V > 0)
        zero = sel & (V <= 0)
        report.unsaturated_u_abs_on_positive = float(np.abs(uc[pos]).max(initial=0.0))
        report.unsaturated_u_max_on_zero = float(uc[zero].max(initial=-np.inf)) if zero.any() else 0.0
    return report
