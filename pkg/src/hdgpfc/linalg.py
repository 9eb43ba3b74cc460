"""Direct solvers: dense LU for element blocks, sparse LU for the skeleton system."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

RESIDUAL_TOL = 1e-10


class SingularMatrixError(np.linalg.LinAlgError):
    def __init__(self, msg: str, row: int | None = None):
        super().__init__(msg)
        self.row = row


class ResidualContractError(RuntimeError):
    def __init__(self, relres: float):
        super().__init__(f"sparse solve relative residual {relres:.3e} exceeds {RESIDUAL_TOL:.0e}")
        self.relres = relres


@dataclass(frozen=True)
class DenseLU:
    lu: np.ndarray
    piv: np.ndarray

    @property
    def n(self) -> int:
        return self.lu.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        return sla.lu_solve((self.lu, self.piv), b, check_finite=False)


def dense_lu(A: np.ndarray) -> DenseLU:
    """PA = LU with partial pivoting; raises on an exact zero pivot."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(A, check_finite=False)
    zero = np.flatnonzero(np.diag(lu) == 0.0)
    if zero.size:
        raise SingularMatrixError(f"zero pivot in row {zero[0]}", int(zero[0]))
    return DenseLU(lu, piv)


@dataclass
class SparseSolveInfo:
    relres: float
    refinements: int


def as_csr(A) -> sp.csr_matrix:
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.sort_indices()
    return A


def sparse_lu(A, diag_pivot: bool = True) -> spla.SuperLU:
    """SuperLU factorization with minimum degree ordering on A^T + A.

    The condensed matrices are structurally symmetric, so this ordering gives
    several times less fill than the column ordering.  With ``diag_pivot`` the
    pivots are taken from the diagonal in that order; partial pivoting would
    otherwise destroy the ordering on indefinite systems (negative or very
    unbalanced taus) and multiply the fill by 20.
    """
    A = sp.csc_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    try:
        return spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0 if diag_pivot else 1.0)
    except RuntimeError as exc:  # SuperLU reports "Factor is exactly singular"
        raise SingularMatrixError(str(exc)) from exc


def _refine(A, fac, b, bnorm, max_refine):
    x = fac.solve(b)
    res = b - A @ x
    relres = np.linalg.norm(res) / bnorm
    it = 0
    while not relres <= RESIDUAL_TOL and it < max_refine and np.isfinite(relres):
        x = x + fac.solve(res)
        res = b - A @ x
        relres = np.linalg.norm(res) / bnorm
        it += 1
    return x, relres, it


def sparse_lu_solve(A, b: np.ndarray, max_refine: int = 3, return_info: bool = False):
    """Solve ``A x = b`` by sparse LU with iterative refinement.

    The relative residual ``|Ax - b| / |b|`` must end below 1e-10.
    """
    A = as_csr(A)
    b = np.asarray(b, dtype=float)
    if b.shape != (A.shape[0],):
        raise ValueError(f"rhs has shape {b.shape}, matrix is {A.shape}")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        x = np.zeros_like(b)
        return (x, SparseSolveInfo(0.0, 0)) if return_info else x
    try:
        x, relres, it = _refine(A, sparse_lu(A), b, bnorm, max_refine)
        ok = relres <= RESIDUAL_TOL and np.all(np.isfinite(x))
    except SingularMatrixError:
        ok = False
    if not ok:
        # tiny diagonal pivot: fall back to partial pivoting
        x, relres, it = _refine(A, sparse_lu(A, diag_pivot=False), b, bnorm, max_refine)
    if not np.all(np.isfinite(x)):
        raise SingularMatrixError("sparse solve produced non-finite values")
    if not relres <= RESIDUAL_TOL:
        raise ResidualContractError(relres)
    return (x, SparseSolveInfo(float(relres), it)) if return_info else x
