import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from optpot.fem import build_structured_mesh
from optpot.problems import Constant, PsiFamily
from optpot.schrodinger import Resolvent, cost, penalized_cost, solve_adjoint, solve_state

from conftest import random_field

ONE = Constant(1.0)

def test_zero_source_gives_zero_state(mesh16):
    u = solve_state(mesh16, np.full(mesh16.n_triangles, 5.0), Constant(0.0))
    assert not u.any()


def test_boundary_values_are_zero(mesh16, rng):
    u = solve_state(mesh16, rng.uniform(0, 100, mesh16.n_triangles), random_field(rng))
    assert not u[mesh16.boundary_mask].any()


@pytest.mark.parametrize("v", [0.0, 3.0, 1e4])
def test_two_by_two_by_hand(mesh2, v):
    # one unknown: (4 + 6 * (1/8) * V / 3) u = 1/4
    u = solve_state(mesh2, np.full(8, v), ONE)
    assert u[4] == pytest.approx(0.25 / (4 + v / 4), rel=1e-12)


def test_large_potential_suppresses_state():
    m = build_structured_mesh(32, 32)
    u = solve_state(m, np.full(m.n_triangles, 1e4), ONE)
    # interior balance V u ~ f away from the boundary layer
    assert u.max() <= 1.1e-4
    assert u.min() >= 0


def test_adjoint_is_negative_resolvent(mesh16, rng):
    V = rng.uniform(0, 50, mesh16.n_triangles)
    g = random_field(rng)
    np.testing.assert_allclose(solve_adjoint(mesh16, V, g), -solve_state(mesh16, V, g), atol=1e-14)


def test_linearity_in_source(mesh16, rng):
    solver = Resolvent(mesh16, tol=1e-13)
    V = rng.uniform(0, 50, mesh16.n_triangles)
    f1, f2 = random_field(rng), random_field(rng)
    b = 2.0 * solver.load(f1) - 3.0 * solver.load(f2)
    u = solver.solve(V, b)
    expect = 2.0 * solver.state(V, f1) - 3.0 * solver.state(V, f2)
    assert np.abs(u - expect).max() <= 1e-10 * np.abs(expect).max()


def test_cost_is_load_dot_state(mesh16, rng):
    f, g = random_field(rng), random_field(rng)
    V = rng.uniform(0, 10, mesh16.n_triangles)
    solver = Resolvent(mesh16)
    u = solver.state(V, f)
    assert cost(mesh16, g, u) == solver.cost(g, u)
    assert solver.cost(g, u) == pytest.approx(solver.load(g) @ u, rel=1e-15)


def test_penalized_cost_cases(mesh16, rng):
    psi = PsiFamily("exponential", 3e-4)
    V = np.zeros(mesh16.n_triangles)
    u = solve_state(mesh16, V, ONE)
    I = cost(mesh16, ONE, u)
    assert penalized_cost(mesh16, ONE, u, V, 0.0, psi) == I
    # Psi(0) = 1 integrates to the domain area
    assert penalized_cost(mesh16, ONE, u, V, 2.0, psi) == pytest.approx(I + 2.0, rel=1e-13)
    with pytest.raises(ValueError):
        penalized_cost(mesh16, ONE, u, V, -1.0, psi)


def test_consistent_mass_solves_too(mesh16, rng):
    V = rng.uniform(0, 100, mesh16.n_triangles)
    ul = solve_state(mesh16, V, ONE, lumped=True)
    uc = solve_state(mesh16, V, ONE, lumped=False)
    # two discretizations of the same operator differ at O(h^2)
    assert np.abs(ul - uc).max() <= 0.05 * np.abs(ul).max()


def test_trivial_solution_limit():
    m = build_structured_mesh(16, 16)
    costs = [cost(m, ONE, solve_state(m, np.full(m.n_triangles, v), ONE)) for v in (0, 1e2, 1e4, 1e6)]
    assert all(a > b > 0 for a, b in zip(costs, costs[1:]))
    # u ~ f / V in the bulk, so the cost decays like |D| / V
    assert costs[-1] <= 2e-6


def test_rejects_bad_potential(mesh16):
    with pytest.raises(ValueError):
        solve_state(mesh16, -np.ones(mesh16.n_triangles), ONE)
    with pytest.raises(ValueError):
        solve_state(mesh16, np.full(mesh16.n_triangles, np.nan), ONE)
    with pytest.raises(ValueError):
        solve_state(mesh16, np.ones(3), ONE)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_maximum_principle(seed):
    rng = np.random.default_rng(seed)
    m = build_structured_mesh(12, 12)
    V = rng.uniform(0, 1e4, m.n_triangles) * (rng.random(m.n_triangles) < 0.5)
    u = solve_state(m, V, random_field(rng, "nonneg"))
    assert u.min() >= -1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_cost_monotone_in_potential(seed):
    # f, g >= 0: raising V lowers int g u
    rng = np.random.default_rng(seed)
    m = build_structured_mesh(10, 10)
    f, g = random_field(rng, "nonneg"), random_field(rng, "nonneg")
    solver = Resolvent(m, tol=1e-13)
    V1 = rng.uniform(0, 100, m.n_triangles)
    V2 = V1 + rng.uniform(0, 100, m.n_triangles)
    c1 = solver.cost(g, solver.state(V1, f))
    c2 = solver.cost(g, solver.state(V2, f))
    assert c2 <= c1 + 1e-12 * abs(c1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_self_adjoint(seed, lumped):
    rng = np.random.default_rng(seed)
    m = build_structured_mesh(10, 10)
    solver = Resolvent(m, lumped, tol=1e-13)
    V = rng.uniform(0, 1e3, m.n_triangles)
    f, g = random_field(rng), random_field(rng)
    a = solver.load(g) @ solver.state(V, f)
    b = solver.load(f) @ solver.state(V, g)
    scale = np.sqrt(abs(solver.load(f) @ solver.state(V, f)) * abs(solver.load(g) @ solver.state(V, g)))
    assert abs(a - b) <= 1e-9 * scale
