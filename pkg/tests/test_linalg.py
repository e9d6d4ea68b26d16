import numpy as np
import pytest
import scipy.sparse as sp

from nudgefem import fem, linalg
from nudgefem import mesh as msh


def random_sparse(n, seed, density=0.05):
    rng = np.random.default_rng(seed)
    A = sp.random(n, n, density=density, random_state=rng, format="csr")
    return linalg.finalize(A + sp.eye(n) * (1 + abs(A).sum(axis=1).max()))


def test_finalize_sorts_and_sums():
    A = sp.csr_matrix((np.array([1.0, 2.0, 0.0]), (np.array([0, 0, 1]), np.array([1, 1, 0]))), shape=(2, 2))
    F = linalg.finalize(A)
    assert F.has_sorted_indices and F.nnz == 1 and F[0, 1] == 3.0


def test_spmv_matches_dense():
    A = random_sparse(60, 0)
    x = np.random.default_rng(1).standard_normal(60)
    assert np.allclose(linalg.spmv(A, x), A.toarray() @ x, atol=1e-13)
    with pytest.raises(ValueError):
        linalg.spmv(A, np.ones(5))


@pytest.mark.parametrize("backend", linalg.available_backends())
def test_solve_residual_contract(backend):
    A = random_sparse(200, 2)
    b = np.random.default_rng(3).standard_normal(200)
    x = linalg.solve(A, b, backend=backend)
    # verified independently of the factorization
    assert np.linalg.norm(b - linalg.spmv(A, x)) <= 1e-10 * np.linalg.norm(b)


def test_solve_zero_rhs_and_bad_tol():
    A = random_sparse(10, 4)
    assert np.all(linalg.solve(A, np.zeros(10)) == 0)
    with pytest.raises(ValueError):
        linalg.solve(A, np.ones(10), tol=1e-3)


def stokes_block(n=4):
    m = msh.barycentric_refine(msh.build_structured(n))
    V, Q = fem.taylor_hood(m)
    K = fem.assemble_stiffness(V) + fem.assemble_mass(V)
    B = fem.assemble_divergence(V, Q)
    C = 1e-2 * fem.assemble_mass(Q)
    f_v = fem.assemble_load(V, np.ones(V.geometry.qweights.shape + (2,)))
    return linalg.BlockSystem(K, -B.T, -B, -C, f_v, np.zeros(Q.n_dofs))


@pytest.mark.parametrize("backend", linalg.available_backends())
def test_block_system(backend):
    S = stokes_block()
    x = linalg.solve(S, backend=backend)
    A = S.monolithic()
    assert np.linalg.norm(S.rhs() - linalg.spmv(A, x)) <= 1e-10 * np.linalg.norm(S.rhs())
    v, q = S.split(x)
    assert len(v) == S.A.shape[0] and len(q) == S.C.shape[0]


def test_block_shape_check():
    with pytest.raises(ValueError):
        linalg.BlockSystem(sp.eye(3), sp.eye(3, 2), sp.eye(2, 3), sp.eye(3), np.ones(3), np.ones(2))


def test_singular_matrix_raises():
    A = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(linalg.SingularSystem):
        linalg.solve(A, np.ones(2))
    B = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(linalg.SingularSystem):
        linalg.solve(B, np.array([1.0, 0.0]), backend="superlu")


def test_backends_agree():
    if len(linalg.available_backends()) < 2:
        pytest.skip("only one backend installed")
    S = stokes_block(3)
    x1 = linalg.solve(S, backend="pardiso")
    x2 = linalg.solve(S, backend="superlu")
    assert np.allclose(x1, x2, rtol=1e-9, atol=1e-12)


def test_lagged_solver_reuses_factorization():
    A = random_sparse(150, 5)
    rng = np.random.default_rng(6)
    sol = linalg.LaggedSolver()
    for k in range(5):
        Ak = linalg.finalize(A + 1e-4 * k * sp.eye(150))
        b = rng.standard_normal(150)
        x = sol.solve(Ak, b)
        assert np.linalg.norm(b - linalg.spmv(Ak, x)) <= 1e-10 * np.linalg.norm(b)
    assert sol.n_factorizations < 5


def test_lagged_solver_refactors_on_large_change():
    A = random_sparse(80, 7)
    sol = linalg.LaggedSolver()
    sol.solve(A, np.ones(80))
    A2 = linalg.finalize(A + 50 * sp.eye(80))
    x = sol.solve(A2, np.ones(80))
    assert np.linalg.norm(np.ones(80) - A2 @ x) <= 1e-10 * np.sqrt(80)
    assert sol.n_factorizations == 2
