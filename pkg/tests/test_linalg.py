import numpy as np
import pytest
import scipy.sparse as sp
from conftest import random_state

from hdgpfc import linalg
from hdgpfc.assembly import Discretization, PfcParams
from hdgpfc.mesh import build_cartesian_mesh


def test_dense_identity_and_diag():
    f = linalg.dense_lu(np.eye(3))
    np.testing.assert_array_equal(f.solve(np.array([1.0, 2.0, 3.0])), [1, 2, 3])
    f = linalg.dense_lu(np.array([[2.0, 0], [0, 4]]))
    np.testing.assert_allclose(f.solve(np.array([2.0, 4])), [1, 1])


def test_dense_random(rng):
    A = rng.standard_normal((50, 50)) + 50 * np.eye(50)
    b = rng.standard_normal(50)
    x = linalg.dense_lu(A).solve(b)
    assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) <= 1e-12


def test_dense_singular_reports_row():
    A = np.array([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(linalg.SingularMatrixError) as ei:
        linalg.dense_lu(A)
    assert ei.value.row == 1


def test_sparse_identity():
    b = np.arange(1.0, 6.0)
    np.testing.assert_array_equal(linalg.sparse_lu_solve(sp.identity(5, format="csr"), b), b)


def test_sparse_laplacian_matches_dense():
    n = 10
    A = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")
    b = np.ones(n)
    np.testing.assert_allclose(linalg.sparse_lu_solve(A, b), np.linalg.solve(A.toarray(), b), atol=1e-12)


def test_sparse_singular():
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(linalg.SingularMatrixError):
        linalg.sparse_lu_solve(A, np.array([1.0, 2.0]))


def test_condensed_system_residual(rng):
    mesh = build_cartesian_mesh(0, 1, 0, 1, 4, 4, True, True)
    disc = Discretization(mesh, 1, "edg")
    st = random_state(disc, rng)
    cs = disc.assemble_skeleton_system(st, st, PfcParams())
    x, info = linalg.sparse_lu_solve(cs.matrix, cs.rhs, return_info=True)
    assert info.relres <= 1e-10
    assert np.linalg.norm(cs.matrix @ x - cs.rhs) / np.linalg.norm(cs.rhs) <= 1e-10


def test_round_trip_and_determinism(rng):
    A = sp.random(40, 40, density=0.1, random_state=1) + 10 * sp.identity(40)
    for _ in range(10):
        b = rng.standard_normal(40)
        x = linalg.sparse_lu_solve(A, b)
        assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) <= 1e-10
    b = rng.standard_normal(40)
    assert np.array_equal(linalg.sparse_lu_solve(A, b), linalg.sparse_lu_solve(A, b))


def test_csr_normalization():
    A = sp.csr_matrix((np.array([1.0, 2.0, 3.0]), np.array([1, 0, 0]), np.array([0, 3, 3])), shape=(2, 2))
    C = linalg.as_csr(A)
    assert C.has_sorted_indices and C.nnz == 2


def test_zero_diagonal_falls_back_to_partial_pivoting():
    A = sp.csr_matrix(np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 2.0], [0.0, 2.0, 1.0]]))
    b = np.array([1.0, 2.0, 3.0])
    x = linalg.sparse_lu_solve(A, b)
    np.testing.assert_allclose(A @ x, b, atol=1e-13)
