"""Discrete resolvent ``R_V`` of ``-lap + V`` with homogeneous Dirichlet data.

The cost ``int g u dx`` is evaluated with the same edge-midpoint rule as the
load vectors, so ``cost = load(g) . u`` holds exactly and the adjoint
``p = -R_V(g)`` yields the exact derivative of the discrete cost.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .fem import (
    Mesh,
    assemble_load,
    assemble_stiffness,
    element_mass_matrices,
    solve_spd,
)

__all__ = [
    "Resolvent",
    "solve_state",
    "solve_adjoint",
    "cost",
    "penalized_cost",
]

SOLVER_TOL = 1e-10


class Resolvent:
    """Caches the stiffness matrix and mass scatter pattern of one mesh.

    ``Resolvent(mesh)(V, b)`` solves ``(K + M_V) u = b`` on the interior nodes
    and returns the full nodal vector with zeros on the boundary.
    """

    def __init__(self, mesh: Mesh, lumped: bool = True, tol: float = SOLVER_TOL):
        self.mesh = mesh
        self.lumped = lumped
        self.tol = tol
        interior = mesh.interior
        self._K = assemble_stiffness(mesh)[interior][:, interior].tocsr()
        self._local = element_mass_matrices(mesh, lumped)
        # map from (element, i, j) contributions to interior matrix entries
        pos = np.full(mesh.n_nodes, -1)
        pos[interior] = np.arange(interior.size)
        tri = pos[mesh.triangles]
        if lumped:
            keep = tri >= 0
            self._lumped_rows = tri[keep]
            self._lumped_elem = np.nonzero(keep)[0]
            self._lumped_w = (mesh.element_area / 3.0)[self._lumped_elem]
        else:
            rows = np.repeat(tri, 3, axis=1)
            cols = np.tile(tri, (1, 3))
            keep = (rows >= 0) & (cols >= 0)
            self._cons_rows = rows[keep]
            self._cons_cols = cols[keep]
            self._cons_elem = np.nonzero(keep)[0]
            self._cons_w = self._local.reshape(-1, 9)[keep]
        self._loads: dict = {}

    def matrix(self, V) -> sp.csr_matrix:
        """Interior block of ``K + M_V``."""
        V = self.mesh.check_elementwise(V, "potential")
        if np.any(V < 0) or not np.all(np.isfinite(V)):
            raise ValueError("potential must be finite and nonnegative")
        n = self.mesh.interior.size
        if self.lumped:
            d = np.bincount(self._lumped_rows, weights=V[self._lumped_elem] * self._lumped_w, minlength=n)
            return (self._K + sp.diags(d)).tocsr()
        M = sp.coo_matrix((V[self._cons_elem] * self._cons_w, (self._cons_rows, self._cons_cols)), shape=(n, n))
        return (self._K + M.tocsr()).tocsr()

    def load(self, f) -> np.ndarray:
        """Nodal load vector of ``f``; memoized per callable."""
        key = id(f)
        hit = self._loads.get(key)
        if hit is not None and hit[0] is f:
            return hit[1]
        b = assemble_load(self.mesh, f)
        self._loads[key] = (f, b)
        return b

    def solve(self, V, rhs: np.ndarray, x0=None, tol: float | None = None) -> np.ndarray:
        """Apply ``R_V`` to a nodal load vector (boundary entries of ``rhs`` are ignored)."""
        interior = self.mesh.interior
        guess = None if x0 is None else np.asarray(x0)[interior]
        u = np.zeros(self.mesh.n_nodes)
        u[interior] = solve_spd(self.matrix(V), rhs[interior], tol=self.tol if tol is None else tol, x0=guess)
        return u

    def state(self, V, f, x0=None, tol=None) -> np.ndarray:
        return self.solve(V, self.load(f), x0=x0, tol=tol)

    def adjoint(self, V, g, x0=None, tol=None) -> np.ndarray:
        return self.solve(V, -self.load(g), x0=x0, tol=tol)

    def cost(self, g, u) -> float:
        u = self.mesh.check_nodal(u, "state")
        return float(self.load(g) @ u)


def solve_state(mesh: Mesh, V, f, lumped: bool = True, tol: float = SOLVER_TOL) -> np.ndarray:
    """``u = R_V(f)``: nodal solution of ``-lap u + V u = f``, ``u = 0`` on the boundary."""
    return Resolvent(mesh, lumped, tol).state(V, f)


def solve_adjoint(mesh: Mesh, V, g, lumped: bool = True, tol: float = SOLVER_TOL) -> np.ndarray:
    """``p = -R_V(g)``: nodal solution of ``-lap p + V p = -g``."""
    return Resolvent(mesh, lumped, tol).adjoint(V, g)


def cost(mesh: Mesh, g, u) -> float:
    """``int g u dx`` by the edge-midpoint rule, with ``g`` evaluated analytically."""
    u = mesh.check_nodal(u, "state")
    return float(assemble_load(mesh, g) @ u)


def penalized_cost(mesh: Mesh, g, u, V, lam: float, psi) -> float:
    """``I(V) + lam * int Psi(V) dx``."""
    from .optimize import volume

    if lam < 0:
        raise ValueError(f"multiplier must be nonnegative, got {lam}")
    return cost(mesh, g, u) + lam * volume(mesh, V, psi)
