"""Sparse storage helpers and the linear-solver contract.

``SparseMatrix`` is scipy's CSR matrix. Direct factorization goes through MKL PARDISO
when ``pypardiso`` is importable and scipy's SuperLU otherwise. Every solve checks
``||b - A x|| <= tol ||b||`` independently of the factorization and raises
:class:`SingularSystem` when the contract cannot be met.
"""
from __future__ import annotations

import ctypes
import glob
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

SparseMatrix = sp.csr_matrix
DEFAULT_TOL = 1e-10


class SingularSystem(RuntimeError):
    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


def finalize(A) -> sp.csr_matrix:
    """CSR with sorted, unique column indices and no stored zeros."""
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.eliminate_zeros()
    if not A.has_sorted_indices:
        A.sort_indices()
    return A


def spmv(A: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    """CSR product written out over the stored arrays (independent of scipy's kernel)."""
    A = sp.csr_matrix(A)
    x = np.asarray(x, dtype=float)
    if x.shape[0] != A.shape[1]:
        raise ValueError(f"shape mismatch {A.shape} @ {x.shape}")
    rows = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
    return np.bincount(rows, weights=A.data * x[A.indices], minlength=A.shape[0])


@dataclass
class BlockSystem:
    """Saddle-point system [[A, Bt], [B, C]] [v; q] = [f_v; f_p]."""

    A: sp.spmatrix
    Bt: sp.spmatrix
    B: sp.spmatrix
    C: sp.spmatrix
    f_v: np.ndarray
    f_p: np.ndarray

    def __post_init__(self):
        nv, np_ = self.A.shape[0], self.C.shape[0]
        if self.A.shape != (nv, nv) or self.C.shape != (np_, np_):
            raise ValueError("diagonal blocks must be square")
        if self.Bt.shape != (nv, np_) or self.B.shape != (np_, nv):
            raise ValueError("off-diagonal block shapes inconsistent with diagonal blocks")

    def monolithic(self) -> sp.csr_matrix:
        return finalize(sp.bmat([[self.A, self.Bt], [self.B, self.C]], format="csr"))

    def rhs(self) -> np.ndarray:
        return np.concatenate([self.f_v, self.f_p])

    def split(self, x: np.ndarray):
        n = self.A.shape[0]
        return x[:n], x[n:]


# --- factorization backends ----------------------------------------------------------
def _find_mkl() -> None:
    if "PYPARDISO_MKL_RT" in os.environ:
        return
    for root in (sys.prefix, "/usr/local", os.path.expanduser("~/.local")):
        hits = sorted(glob.glob(os.path.join(root, "lib*", "libmkl_rt.so*")), key=len)
        if hits:
            os.environ["PYPARDISO_MKL_RT"] = hits[0]
            return


def _pardiso_available() -> bool:
    if os.environ.get("NUDGEFEM_SOLVER", "") == "superlu":
        return False
    try:
        _find_mkl()
        import pypardiso  # noqa: F401
    except (ImportError, OSError):
        return False
    return True


PARDISO = _pardiso_available()

# 1-based iparm indices: user values, nested dissection, pivot perturbation 1e-13,
# scaling and matching on, no internal refinement
_PARDISO_IPARM = {1: 1, 2: 2, 8: 0, 10: 13, 11: 1, 13: 1}


def available_backends() -> list[str]:
    return (["pardiso"] if PARDISO else []) + ["superlu"]


class LU:
    """Sparse LU factorization of a square matrix."""

    def __init__(self, A, backend: str | None = None):
        A = finalize(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got {A.shape}")
        if A.shape[0] and np.any(np.diff(A.indptr) == 0):
            raise SingularSystem("matrix has an all-zero row")
        self.shape = A.shape
        self.backend = backend or available_backends()[0]
        if self.backend == "pardiso":
            from pypardiso import PyPardisoSolver

            self._solver = PyPardisoSolver(mtype=11)
            # explicit iparm: otherwise MKL applies its defaults, which include two
            # refinement sweeps per solve; refinement is done here against the contract
            for i, v in _PARDISO_IPARM.items():
                self._solver.set_iparm(i, v)
            self._A = A
            self._solver.factorize(A)
            self._ia = A.indptr.astype(np.int32) + 1
            self._ja = A.indices.astype(np.int32) + 1
        elif self.backend == "superlu":
            try:
                self._lu = spla.splu(A.tocsc())
            except RuntimeError as exc:
                raise SingularSystem(f"factorization breakdown: {exc}") from exc
        else:
            raise ValueError(f"unknown backend {self.backend!r}")

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.backend == "pardiso":
            x = self._pardiso_solve(np.ascontiguousarray(b, dtype=float))
        else:
            x = self._lu.solve(np.asarray(b, dtype=float))
        return np.asarray(x).reshape(np.shape(b))

    def _pardiso_solve(self, b):
        # phase 33 with the index arrays converted once at factorization time
        s, A = self._solver, self._A
        x = np.zeros_like(b)
        err = ctypes.c_int32(0)
        i32 = ctypes.POINTER(ctypes.c_int32)
        f64 = ctypes.POINTER(ctypes.c_double)
        s._mkl_pardiso(s.pt.ctypes.data_as(ctypes.POINTER(s._pt_type[0])),
                       ctypes.byref(ctypes.c_int32(1)), ctypes.byref(ctypes.c_int32(1)),
                       ctypes.byref(ctypes.c_int32(s.mtype)), ctypes.byref(ctypes.c_int32(33)),
                       ctypes.byref(ctypes.c_int32(A.shape[0])), A.data.ctypes.data_as(f64),
                       self._ia.ctypes.data_as(i32), self._ja.ctypes.data_as(i32),
                       s.perm.ctypes.data_as(i32),
                       ctypes.byref(ctypes.c_int32(1 if b.ndim == 1 else b.shape[1])),
                       s.iparm.ctypes.data_as(i32), ctypes.byref(ctypes.c_int32(0)),
                       b.ctypes.data_as(f64), x.ctypes.data_as(f64), ctypes.byref(err))
        if err.value != 0:
            raise SingularSystem(f"PARDISO error {err.value}")
        return x

    def __del__(self):
        solver = getattr(self, "_solver", None)
        if solver is not None:
            try:
                solver.free_memory(everything=True)
            except Exception:
                pass


def _rel_residual(A, x, b, bnorm):
    r = b - A @ x
    return r, (np.linalg.norm(r) / bnorm if bnorm > 0 else np.linalg.norm(r))


def solve(S, b: np.ndarray | None = None, tol: float = DEFAULT_TOL, backend: str | None = None,
          max_refine: int = 8) -> np.ndarray:
    """Solve a monolithic system or a :class:`BlockSystem` to relative residual ``tol``."""
    if not (0 < tol <= 1e-6):
        raise ValueError(f"tol must lie in (0, 1e-6], got {tol}")
    if isinstance(S, BlockSystem):
        A = S.monolithic()
        b = S.rhs() if b is None else b
    else:
        A = finalize(S)
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    lu = LU(A, backend)
    if bnorm == 0.0:
        return np.zeros_like(b)
    x = lu.solve(b)
    for _ in range(max_refine + 1):
        if not np.all(np.isfinite(x)):
            raise SingularSystem("non-finite solution")
        r, res = _rel_residual(A, x, b, bnorm)
        if res <= tol:
            return x
        x = x + lu.solve(r)
    raise SingularSystem("residual contract not met after refinement", res)


class LaggedSolver:
    """Solve a slowly varying sequence of systems, reusing one factorization.

    The stored factorization preconditions a Richardson iteration started from the
    caller's guess; the matrix is refactorized when the iteration stalls or needs more
    than ``refactor_after`` corrections. The residual contract is identical to
    :func:`solve`.
    """

    def __init__(self, tol: float = DEFAULT_TOL, backend: str | None = None,
                 refactor_after: int = 4, max_iter: int = 12):
        self.tol = tol
        self.backend = backend
        self.refactor_after = refactor_after
        self.max_iter = max_iter
        self.lu: LU | None = None
        self.n_factorizations = 0
        self.n_iterations = 0

    def _factor(self, A):
        self.lu = LU(A, self.backend)
        self.n_factorizations += 1

    def _iterate(self, A, b, x, bnorm):
        last = np.inf
        for k in range(self.max_iter + 1):
            if not np.all(np.isfinite(x)):
                return x, k, np.inf
            r, res = _rel_residual(A, x, b, bnorm)
            if res <= self.tol:
                return x, k, res
            if res > 0.5 * last:
                return x, k, res
            last = res
            x = x + self.lu.solve(r)
            self.n_iterations += 1
        r, res = _rel_residual(A, x, b, bnorm)
        return x, self.max_iter, res

    def solve(self, A, b: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            return np.zeros_like(b)
        if self.lu is None or self.lu.shape != A.shape:
            self._factor(A)
            x0 = None
        x = self.lu.solve(b) if x0 is None else np.array(x0, dtype=float)
        x, k, res = self._iterate(A, b, x, bnorm)
        if res <= self.tol and k <= self.refactor_after:
            return x
        if res > self.tol:
            self._factor(A)
            x, k, res = self._iterate(A, b, self.lu.solve(b), bnorm)
            if res > self.tol:
                raise SingularSystem("residual contract not met", res)
        else:
            # converged, but slowly: refresh the factorization for the next call
            self._factor(A)
        return x
