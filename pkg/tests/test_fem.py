import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from optpot.fem import (
    SolverError,
    assemble_load,
    assemble_potential_mass,
    assemble_stiffness,
    build_structured_mesh,
    solve_spd,
)

CENTER = 4  # the only interior node of the 2x2 mesh


def test_large_mesh_counts():
    m = build_structured_mesh(200, 200)
    assert (m.n_nodes, m.n_triangles) == (40401, 80000)


def test_smallest_mesh_is_all_boundary():
    m = build_structured_mesh(1, 1)
    assert m.n_nodes == 4 and m.n_triangles == 2
    assert m.boundary_mask.all()


def test_two_by_two_has_single_interior_node(mesh2):
    assert mesh2.n_nodes == 9 and mesh2.n_triangles == 8
    assert list(mesh2.interior) == [CENTER]
    np.testing.assert_array_equal(mesh2.nodes[CENTER], [0.5, 0.5])


@pytest.mark.parametrize("nx,ny,rect", [(3, 5, ((0, 1), (0, 1))), (7, 2, ((-1, 2), (0.5, 0.75)))])
def test_mesh_invariants(nx, ny, rect):
    m = build_structured_mesh(nx, ny, rect)
    assert m.n_nodes == (nx + 1) * (ny + 1)
    assert m.n_triangles == 2 * nx * ny
    (x0, x1), (y0, y1) = rect
    dx, dy = (x1 - x0) / nx, (y1 - y0) / ny
    np.testing.assert_allclose(m.element_area, dx * dy / 2, rtol=1e-14)
    assert abs(m.element_area.sum() - m.area) <= 1e-12 * m.area
    on_edge = (np.isclose(m.nodes[:, 0], x0) | np.isclose(m.nodes[:, 0], x1)
               | np.isclose(m.nodes[:, 1], y0) | np.isclose(m.nodes[:, 1], y1))
    np.testing.assert_array_equal(m.boundary_mask, on_edge)
    # counterclockwise orientation
    p = m.nodes[m.triangles]
    cross = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
             - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    assert np.all(cross > 0)


def test_diagonal_runs_lower_left_to_upper_right():
    m = build_structured_mesh(1, 1)
    shared = set(m.triangles[0]) & set(m.triangles[1])
    assert {tuple(m.nodes[i]) for i in shared} == {(0.0, 0.0), (1.0, 1.0)}


@pytest.mark.parametrize("args", [(0, 3), (3, -1), (2.5, 2)])
def test_mesh_rejects_bad_counts(args):
    with pytest.raises(ValueError):
        build_structured_mesh(*args)


def test_mesh_rejects_degenerate_rectangle():
    with pytest.raises(ValueError):
        build_structured_mesh(2, 2, ((0, 1), (1, 1)))


def test_stiffness_reduces_to_five_point_stencil(mesh2):
    K = assemble_stiffness(mesh2).toarray()
    assert K[CENTER, CENTER] == pytest.approx(4.0, abs=1e-14)
    for nb in (1, 3, 5, 7):
        assert K[CENTER, nb] == pytest.approx(-1.0, abs=1e-14)
    # the cell diagonals couple nothing on right-triangle meshes
    for nb in (0, 2, 6, 8):
        assert K[CENTER, nb] == pytest.approx(0.0, abs=1e-14)


def test_stiffness_symmetry_and_kernel():
    m = build_structured_mesh(9, 6, ((0, 2), (0, 1)))
    K = assemble_stiffness(m)
    assert abs(K - K.T).max() == 0.0
    rows = np.asarray(K.sum(axis=1)).ravel()
    assert np.abs(rows[m.interior]).max() <= 1e-12
    off = K - sp.diags(K.diagonal())
    assert off.max() <= 1e-14


def test_potential_mass_zero(mesh2):
    assert assemble_potential_mass(mesh2, np.zeros(8)).nnz == 0 or \
        abs(assemble_potential_mass(mesh2, np.zeros(8))).max() == 0


def test_lumped_mass_hand_value(mesh2):
    M = assemble_potential_mass(mesh2, np.ones(8), lumped=True)
    # six triangles of area 1/8 meet at the centre, each contributing a third
    assert M[CENTER, CENTER] == pytest.approx(6 * (1 / 8) / 3, abs=1e-15)


def test_lumped_and_consistent_total_mass_agree(rng):
    m = build_structured_mesh(5, 4)
    V = rng.uniform(0, 10, m.n_triangles)
    Ml = assemble_potential_mass(m, V, lumped=True)
    Mc = assemble_potential_mass(m, V, lumped=False)
    expected = V @ m.element_area
    assert Ml.sum() == pytest.approx(expected, rel=1e-13)
    assert Mc.sum() == pytest.approx(expected, rel=1e-13)
    assert abs(Mc - Mc.T).max() <= 1e-15


def test_potential_mass_rejects_negative(mesh2):
    with pytest.raises(ValueError):
        assemble_potential_mass(mesh2, -np.ones(8))


def test_load_examples(mesh2):
    assert not assemble_load(mesh2, lambda x, y: 0 * x).any()
    b = assemble_load(mesh2, lambda x, y: np.ones_like(x))
    assert b[CENTER] == pytest.approx(0.25, abs=1e-15)


def test_load_partition_of_unity():
    m = build_structured_mesh(7, 3, ((0, 3), (1, 2)))
    b = assemble_load(m, lambda x, y: np.full_like(x, -2.5))
    assert b.sum() == pytest.approx(-2.5 * m.area, rel=1e-12)


def test_load_quadrature_exact_for_quadratics():
    m = build_structured_mesh(5, 7)
    # int x^2 over the unit square, and int x * x via the nodal interpolant of x
    assert assemble_load(m, lambda x, y: x**2).sum() == pytest.approx(1 / 3, rel=1e-13)
    assert assemble_load(m, lambda x, y: x) @ m.nodes[:, 0] == pytest.approx(1 / 3, rel=1e-13)
    assert assemble_load(m, lambda x, y: x * y) @ m.nodes[:, 1] == pytest.approx(1 / 6, rel=1e-13)


def test_two_by_two_poisson_by_hand(mesh2):
    K = assemble_stiffness(mesh2)[mesh2.interior][:, mesh2.interior]
    b = assemble_load(mesh2, lambda x, y: np.ones_like(x))[mesh2.interior]
    u = solve_spd(K, b)
    assert u[0] == pytest.approx(0.0625, rel=1e-12)


def test_solve_identity():
    b = np.arange(1.0, 6.0)
    np.testing.assert_allclose(solve_spd(sp.identity(5), b), b)


def test_solve_zero_rhs():
    assert not solve_spd(sp.identity(3), np.zeros(3)).any()


def test_solve_random_spd_residual(rng):
    n = 60
    B = rng.normal(size=(n, n))
    A = B @ B.T + n * np.eye(n)
    b = rng.normal(size=n)
    for tol in (1e-6, 1e-10, 1e-13):
        x = solve_spd(A, b, tol=tol)
        assert np.linalg.norm(A @ x - b) <= tol * np.linalg.norm(b)


def test_solve_is_deterministic(rng):
    m = build_structured_mesh(12, 12)
    K = assemble_stiffness(m)[m.interior][:, m.interior]
    b = rng.normal(size=m.interior.size)
    assert np.array_equal(solve_spd(K, b), solve_spd(K, b))


def test_solver_failure_reports_residual():
    m = build_structured_mesh(20, 20)
    K = assemble_stiffness(m)[m.interior][:, m.interior]
    with pytest.raises(SolverError) as info:
        solve_spd(K, np.ones(K.shape[0]), tol=1e-12, maxiter=3)
    assert info.value.residual > 1e-12
    assert info.value.iterations >= 3


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_stiffness_plus_lumped_mass_is_m_matrix(nx, ny, seed):
    m = build_structured_mesh(nx, ny)
    V = np.random.default_rng(seed).uniform(0, 1e4, m.n_triangles)
    A = (assemble_stiffness(m) + assemble_potential_mass(m, V, lumped=True)).toarray()
    A = A[np.ix_(m.interior, m.interior)]
    if A.size == 0:
        return
    off = A - np.diag(np.diag(A))
    assert np.all(off <= 1e-14)
    assert np.all(np.diag(A) > 0)
    assert np.all(np.diag(A) + off.sum(axis=1) >= -1e-12)


def test_interior_elements():
    assert build_structured_mesh(2, 2).interior_elements.size == 0
    # on a 3x3 mesh only the two halves of the centre cell avoid the boundary
    np.testing.assert_array_equal(build_structured_mesh(3, 3).interior_elements, [8, 9])
