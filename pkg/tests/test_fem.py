import numpy as np
import pytest
import scipy.sparse as sp

from nudgefem import fem
from nudgefem import mesh as msh
from nudgefem.fem import FeFunction, FeSpace, Kind


@pytest.fixture(scope="module")
def spaces():
    m = msh.barycentric_refine(msh.build_structured(3))
    return fem.taylor_hood(m)


def monomial_integral(a, b):
    # integral of x^a y^b over the reference triangle (0,0),(1,0),(0,1)
    from math import factorial

    return factorial(a) * factorial(b) / factorial(a + b + 2)


def test_quadrature_exact_to_degree_5():
    q = fem.QUAD
    assert q.weights.sum() == pytest.approx(0.5, abs=1e-15)
    x, y = q.points[:, 1], q.points[:, 2]
    for a in range(6):
        for b in range(6 - a):
            assert np.dot(q.weights, x**a * y**b) == pytest.approx(monomial_integral(a, b), abs=1e-15)
    # and not of degree 6 in general
    errs = [abs(np.dot(q.weights, x**a * y**(6 - a)) - monomial_integral(a, 6 - a)) for a in range(7)]
    assert max(errs) > 1e-8


def test_dof_counts_and_layout(spaces):
    V, Q = spaces
    m = V.mesh
    ne = len(m.edges()[0])
    assert Q.n_dofs == m.n_vertices
    assert V.n_scalar == m.n_vertices + ne and V.n_dofs == 2 * V.n_scalar
    assert V.dof_map.shape == (m.n_triangles, 6)
    # boundary dofs are exactly the nodes on the boundary
    on = np.isclose(V.nodes[:, 0], 0) | np.isclose(V.nodes[:, 0], 1) | np.isclose(V.nodes[:, 1], 0) | np.isclose(V.nodes[:, 1], 1)
    assert np.array_equal(np.sort(V.boundary_dofs[:len(V.boundary_dofs) // 2]), np.flatnonzero(on))
    assert np.array_equal(V.boundary_dofs[len(V.boundary_dofs) // 2:], V.boundary_dofs[:len(V.boundary_dofs) // 2] + V.n_scalar)


def test_mass_total(spaces):
    V, Q = spaces
    assert fem.assemble_mass(Q).sum() == pytest.approx(1.0, abs=1e-13)
    P2 = FeSpace(Q.mesh, Kind.SCALAR_QUADRATIC)
    assert fem.assemble_mass(P2).sum() == pytest.approx(1.0, abs=1e-13)
    M = fem.assemble_mass(V)
    assert abs(M - M.T).max() < 1e-15
    assert M.sum() == pytest.approx(2.0, abs=1e-13)


def test_stiffness_of_quadratic(spaces):
    V, _ = spaces
    u = V.interpolate(lambda x, y: (x**2, 0 * x))
    K = fem.assemble_stiffness(V)
    assert u.coefficients @ K @ u.coefficients == pytest.approx(4.0 / 3.0, abs=1e-10)
    ones = V.interpolate(lambda x, y: (1 + 0 * x, 1 + 0 * x)).coefficients
    assert np.abs(K @ ones).max() < 1e-12


def test_divergence_of_linear_field(spaces):
    V, Q = spaces
    B = fem.assemble_divergence(V, Q)
    u = V.interpolate(lambda x, y: (x, y)).coefficients
    load1 = fem.assemble_load(Q, np.ones_like(Q.geometry.qweights))
    assert np.abs(B @ u - 2 * load1).max() < 1e-10
    u2 = V.interpolate(lambda x, y: (x**2, 0 * x)).coefficients
    assert np.ones(Q.n_dofs) @ (B @ u2) == pytest.approx(1.0, abs=1e-12)


def test_grad_div(spaces):
    V, _ = spaces
    G = fem.assemble_grad_div(V)
    u = V.interpolate(lambda x, y: (x, y)).coefficients
    assert u @ G @ u == pytest.approx(4.0, abs=1e-10)
    w = V.interpolate(lambda x, y: (y**2, x**2)).coefficients  # divergence free
    assert abs(w @ G @ w) < 1e-12
    assert np.linalg.eigvalsh(G.toarray()).min() > -1e-10


def random_function(space, seed):
    return FeFunction(space, np.random.default_rng(seed).standard_normal(space.n_dofs))


def test_convection_skew_and_equivalence(spaces):
    V, _ = spaces
    w, v, z = (random_function(V, s) for s in (1, 2, 3))
    # the two forms differ by a boundary flux of w, so w vanishes on the boundary
    w.coefficients[V.boundary_dofs] = 0.0
    N = fem.assemble_convection(w, V)
    assert abs(N + N.T).max() <= 1e-12 * abs(N).max()
    W = V.geometry.qweights
    wq = V.values_at_qp(w.coefficients)
    Jv = V.grads_at_qp(v.coefficients)  # [e, q, comp, dir]
    zq = V.values_at_qp(z.coefficients)
    vq = V.values_at_qp(v.coefficients)
    divw = np.trace(V.grads_at_qp(w.coefficients), axis1=-2, axis2=-1)
    conv = np.einsum("eqd,eqcd->eqc", wq, Jv)
    direct = np.sum(W[..., None] * (conv + 0.5 * divw[..., None] * vq) * zq)
    assert abs(z.coefficients @ N @ v.coefficients - direct) < 1e-11 * max(1.0, abs(direct))


def test_scalar_transport(spaces):
    V, Q = spaces
    w = V.interpolate(lambda x, y: (1 + 0 * x, 0 * x))
    T = fem.assemble_scalar_convection(w, Q)
    p = Q.interpolate(lambda x, y: x).coefficients
    assert np.ones(Q.n_dofs) @ T @ p == pytest.approx(1.0, abs=1e-12)


def test_interpolation_and_evaluation(spaces):
    V, Q = spaces
    f = V.interpolate(lambda x, y: (x * y + 1, x**2 - y))
    pts = np.array([[0.1, 0.7], [0.5, 0.5], [0.99, 0.01]])
    tri, bary = V.mesh.locate(pts)
    vals = fem.evaluate(f, tri, bary)
    assert np.allclose(vals, np.column_stack([pts[:, 0] * pts[:, 1] + 1, pts[:, 0] ** 2 - pts[:, 1]]), atol=1e-13)
    E = fem.evaluation_matrix(V, tri, bary)
    assert np.allclose(E @ f.coefficients[:V.n_scalar], vals[:, 0], atol=1e-13)
    g = Q.interpolate(lambda x, y: 2 * x - y)
    assert np.allclose(fem.evaluate(g, tri, bary), 2 * pts[:, 0] - pts[:, 1], atol=1e-13)


def test_integrate_and_load(spaces):
    V, Q = spaces
    geo = Q.geometry
    vals = geo.qpoints[..., 0] ** 2
    assert fem.integrate(Q, vals) == pytest.approx(1.0 / 3.0, abs=1e-14)
    assert fem.assemble_load(Q, vals).sum() == pytest.approx(1.0 / 3.0, abs=1e-14)


def test_apply_dirichlet():
    A = sp.csr_matrix(np.array([[4.0, -1, 0], [-1, 4, -1], [0, -1, 4]]))
    b = np.array([1.0, 2.0, 3.0])
    A2, b2 = fem.apply_dirichlet(A, b, [0], [5.0])
    x = np.linalg.solve(A2.toarray(), b2)
    assert x[0] == pytest.approx(5.0)
    assert abs(A2 - A2.T).max() == 0
    # the unconstrained rows still satisfy the original equations
    assert np.allclose((A @ x)[1:], b[1:])
    with pytest.raises(IndexError):
        fem.apply_dirichlet(A, b, [3], [0.0])
    with pytest.raises(ValueError):
        fem.apply_dirichlet(A, b, [0], [np.nan])


def test_convection_rejects_foreign_mesh(spaces):
    V, _ = spaces
    V2, _ = fem.taylor_hood(msh.build_structured(2))
    with pytest.raises(ValueError):
        fem.assemble_convection(V2.zero(), V)
