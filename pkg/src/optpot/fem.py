"""P1/P0 finite elements on structured right-triangle meshes of a rectangle.

Nodes are numbered row by row, ``node(i, j) = j * (nx + 1) + i``. Cell
``(i, j)`` is split along its lower-left to upper-right diagonal into the
triangles ``2k`` and ``2k + 1`` with ``k = j * nx + i``, both counterclockwise.

All integrals use the three-point edge-midpoint rule, which is exact for
quadratic integrands on a triangle.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Mesh",
    "SolverError",
    "build_structured_mesh",
    "assemble_stiffness",
    "assemble_potential_mass",
    "assemble_load",
    "element_mass_matrices",
    "solve_spd",
]

ScalarFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]


class SolverError(RuntimeError):
    """Raised when the conjugate gradient solver hits its iteration cap."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True, eq=False)
class Mesh:
    nx: int
    ny: int
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    nodes: np.ndarray = field(repr=False)
    triangles: np.ndarray = field(repr=False)
    boundary_mask: np.ndarray = field(repr=False)
    element_area: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def area(self) -> float:
        """Area of the rectangle |D|."""
        return (self.x_range[1] - self.x_range[0]) * (self.y_range[1] - self.y_range[0])

    @cached_property
    def interior(self) -> np.ndarray:
        """Indices of the non-boundary nodes, i.e. the unknowns after Dirichlet elimination."""
        return np.flatnonzero(~self.boundary_mask)

    @cached_property
    def interior_elements(self) -> np.ndarray:
        """Indices of the triangles with no boundary vertex."""
        return np.flatnonzero(~self.boundary_mask[self.triangles].any(axis=1))

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    @cached_property
    def edge_midpoints(self) -> np.ndarray:
        """Array of shape (n_triangles, 3, 2); midpoint ``k`` lies on the edge (k, k+1 mod 3)."""
        p = self.nodes[self.triangles]
        return 0.5 * (p + np.roll(p, -1, axis=1))

    def check_nodal(self, values: np.ndarray, name: str = "field") -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_nodes,):
            raise ValueError(f"{name} has shape {values.shape}, expected ({self.n_nodes},) nodal values")
        return values

    def check_elementwise(self, values: np.ndarray, name: str = "field") -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_triangles,):
            raise ValueError(f"{name} has shape {values.shape}, expected ({self.n_triangles},) element values")
        return values


def build_structured_mesh(nx: int, ny: int, rect=((0.0, 1.0), (0.0, 1.0))) -> Mesh:
    """Triangulate ``rect = ((x0, x1), (y0, y1))`` with ``nx * ny`` cells split in two.

    >>> m = build_structured_mesh(200, 200)
    >>> m.n_nodes, m.n_triangles
    (40401, 80000)
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"nx and ny must be positive integers, got nx={nx}, ny={ny}")
    nx, ny = int(nx), int(ny)
    (x0, x1), (y0, y1) = (tuple(map(float, r)) for r in rect)
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate rectangle {rect!r}")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    I, J = np.meshgrid(np.arange(nx), np.arange(ny))
    a = (J * (nx + 1) + I).ravel()
    b = a + 1
    c = a + nx + 2
    d = a + nx + 1
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([a, b, c])
    triangles[1::2] = np.column_stack([a, c, d])

    boundary = np.zeros((ny + 1, nx + 1), dtype=bool)
    boundary[0, :] = boundary[-1, :] = True
    boundary[:, 0] = boundary[:, -1] = True

    dx = (x1 - x0) / nx
    dy = (y1 - y0) / ny
    area = np.full(triangles.shape[0], 0.5 * dx * dy)
    return Mesh(nx, ny, (x0, x1), (y0, y1), nodes, triangles, boundary.ravel(), area)


def _gradients(mesh: Mesh) -> np.ndarray:
    """Gradients of the three barycentric basis functions, shape (n_triangles, 3, 2)."""
    p = mesh.nodes[mesh.triangles]
    # grad(phi_k) = rot90(p_{k+2} - p_{k+1}) / (2|T|)
    e = np.roll(p, -2, axis=1) - np.roll(p, -1, axis=1)
    grads = np.stack([-e[..., 1], e[..., 0]], axis=-1)
    return grads / (2.0 * mesh.element_area[:, None, None])


def _scatter(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    return A.tocsr()


def assemble_stiffness(mesh: Mesh) -> sp.csr_matrix:
    """P1 stiffness matrix over all nodes, Dirichlet rows included."""
    G = _gradients(mesh)
    local = np.einsum("tid,tjd->tij", G, G) * mesh.element_area[:, None, None]
    K = _scatter(mesh, local)
    # round-off from the two triangles sharing an edge can break exact symmetry
    return ((K + K.T) * 0.5).tocsr()


_CONSISTENT_REF = (np.ones((3, 3)) + np.eye(3)) / 12.0


def element_mass_matrices(mesh: Mesh, lumped: bool = True) -> np.ndarray:
    """Per-element mass matrices for unit potential, shape (n_triangles, 3, 3)."""
    A = mesh.element_area[:, None, None]
    if lumped:
        return A * np.eye(3)[None] / 3.0
    return A * _CONSISTENT_REF[None]


def assemble_potential_mass(mesh: Mesh, V, lumped: bool = True) -> sp.csr_matrix:
    """Mass matrix of the P0 potential ``V``; diagonal when ``lumped``."""
    V = mesh.check_elementwise(V, "potential")
    if not np.all(np.isfinite(V)):
        raise ValueError("potential must be finite")
    if np.any(V < 0):
        raise ValueError("potential must be nonnegative")
    if lumped:
        diag = np.zeros(mesh.n_nodes)
        np.add.at(diag, mesh.triangles, (V * mesh.element_area / 3.0)[:, None])
        return sp.diags(diag, format="csr")
    return _scatter(mesh, element_mass_matrices(mesh, lumped=False) * V[:, None, None])


def assemble_load(mesh: Mesh, f: ScalarFunction) -> np.ndarray:
    """Load vector ``b_i = int f phi_i dx`` with the edge-midpoint rule."""
    mid = mesh.edge_midpoints
    fm = np.broadcast_to(np.asarray(f(mid[..., 0], mid[..., 1]), dtype=float), mid.shape[:2])
    # node k touches midpoints k and k-1, where phi_k = 1/2
    local = (fm + np.roll(fm, 1, axis=1)) * (mesh.element_area / 6.0)[:, None]
    b = np.zeros(mesh.n_nodes)
    np.add.at(b, mesh.triangles, local)
    return b


def solve_spd(A, b, tol: float = 1e-10, x0=None, maxiter: int | None = None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients for a symmetric positive definite ``A``.

    Stops once ``||b - A x|| <= tol * ||b||``; the residual is recomputed from
    scratch before returning so the contract holds for the returned vector.
    Raises :class:`SolverError` after ``maxiter`` (default ``20 n``) iterations.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"matrix shape {A.shape} does not match right-hand side length {n}")
    if maxiter is None:
        maxiter = 20 * max(n, 1)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n)
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise ValueError("matrix diagonal must be positive")
    inv_diag = 1.0 / diag
    target = tol * bnorm

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    it = 0
    while True:
        z = inv_diag * r
        p = z.copy()
        rz = r @ z
        while np.linalg.norm(r) > target and it < maxiter:
            Ap = A @ p
            step = rz / (p @ Ap)
            x += step * p
            r -= step * Ap
            z = inv_diag * r
            rz_new = r @ z
            p *= rz_new / rz
            p += z
            rz = rz_new
            it += 1
        # the recursive residual drifts from the true one near machine precision
        r = b - A @ x
        res = np.linalg.norm(r)
        if res <= target:
            return x
        if it >= maxiter:
            raise SolverError("conjugate gradients did not converge", res / bnorm, it)
