"""Sparse/dense linear algebra kernel shared by the rest of the package.

Matrices are ``scipy.sparse`` CSR matrices or plain ``numpy`` arrays, real or
complex. Complex matrices produced by the gamblet transform are complex
*symmetric* (not Hermitian), so every product here uses the plain transpose.
"""

from __future__ import annotations

import enum
from pathlib import Path

import numpy as np
import scipy.io
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

#: Systems with at most this many unknowns are factorized directly.
DENSE_THRESHOLD = 1024


class ScalarField(enum.Enum):
    REAL = "real"
    COMPLEX = "complex"

    @property
    def dtype(self):
        return np.float64 if self is ScalarField.REAL else np.complex128

    @classmethod
    def of(cls, *objs) -> "ScalarField":
        """Smallest field containing every scalar/array in ``objs``."""
        for obj in objs:
            if np.iscomplexobj(obj):
                return cls.COMPLEX
        return cls.REAL


class SolverError(RuntimeError):
    """Raised when an iterative solve or eigen-solve fails to converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


def as_csr(m, dtype=None):
    if sp.issparse(m):
        out = m.tocsr()
    else:
        out = sp.csr_matrix(np.atleast_2d(np.asarray(m)))
    if dtype is not None and out.dtype != dtype:
        out = out.astype(dtype)
    out.sum_duplicates()
    return out


def to_dense(m):
    return m.toarray() if sp.issparse(m) else np.asarray(m)


def _check_conform(*shapes):
    for (a, b) in zip(shapes[:-1], shapes[1:]):
        if a[1] != b[0]:
            raise ValueError(f"dimension mismatch: {a} vs {b}")


def spmv(m, v):
    """Matrix-vector product ``m @ v``."""
    v = np.asarray(v)
    if m.shape[1] != v.shape[0]:
        raise ValueError(f"dimension mismatch: {m.shape} @ {v.shape}")
    return m @ v


def triple_product(l, a, r, drop_tol=0.0):
    """Return ``l @ a @ r``.

    Sparse inputs give a CSR result. Entries with modulus ``<= drop_tol`` are
    removed; the default of 0 keeps the exact sparsity pattern of the product.
    """
    _check_conform(l.shape, a.shape, r.shape)
    if all(sp.issparse(x) for x in (l, a, r)):
        out = (as_csr(l) @ as_csr(a) @ as_csr(r)).tocsr()
        if drop_tol > 0:
            out.data[np.abs(out.data) <= drop_tol] = 0
            out.eliminate_zeros()
        return out
    out = to_dense(l) @ to_dense(a) @ to_dense(r)
    if drop_tol > 0:
        out[np.abs(out) <= drop_tol] = 0
    return out


def _jacobi_pcg(m, b, tol, maxiter):
    diag = m.diagonal()
    precond = spla.LinearOperator(m.shape, matvec=lambda x: x / diag, dtype=m.dtype)
    x, info = spla.cg(m, b, rtol=tol, atol=0.0, maxiter=maxiter, M=precond)
    res = np.linalg.norm(m @ x - b) / max(np.linalg.norm(b), np.finfo(float).tiny)
    if info != 0 and res > tol:
        raise SolverError(f"PCG did not converge (relative residual {res:.3e})", res)
    return x


class SymmetricSolver:
    """Reusable solver for a symmetric (real SPD or complex symmetric) matrix.

    Small systems (``<= DENSE_THRESHOLD``) get a dense Cholesky (real) or LU
    (complex) factorization, large complex systems a sparse LU and large real
    systems Jacobi-preconditioned CG to relative residual ``tol``.
    """

    def __init__(self, m, tol=1e-12, maxiter=None):
        n, n2 = m.shape
        if n != n2:
            raise ValueError(f"matrix must be square, got {m.shape}")
        self.n = n
        self.tol = tol
        self.maxiter = maxiter if maxiter is not None else 10 * n + 100
        self.field = ScalarField.of(m.data if sp.issparse(m) else m)
        self._m = m
        if n <= DENSE_THRESHOLD:
            dense = to_dense(m)
            if self.field is ScalarField.REAL:
                try:
                    self._chol = sla.cho_factor(dense)
                    self.method = "cholesky"
                except np.linalg.LinAlgError as exc:
                    raise SolverError(f"matrix is not positive definite: {exc}") from exc
            else:
                self._lu = sla.lu_factor(dense, check_finite=False)
                self.method = "lu"
        elif self.field is ScalarField.COMPLEX:
            self._splu = spla.splu(as_csr(m).tocsc())
            self.method = "splu"
        else:
            self._csr = as_csr(m)
            self.method = "pcg"

    def solve(self, b):
        b = np.asarray(b)
        if b.shape[0] != self.n:
            raise ValueError(f"dimension mismatch: {self.n} vs {b.shape}")
        if self.method == "cholesky":
            if np.iscomplexobj(b):
                return self.solve(b.real) + 1j * self.solve(b.imag)
            return sla.cho_solve(self._chol, b)
        if self.method == "lu":
            return sla.lu_solve(self._lu, b.astype(np.complex128))
        if self.method == "splu":
            return self._splu.solve(b.astype(np.complex128))
        if np.iscomplexobj(b):
            return self.solve(b.real) + 1j * self.solve(b.imag)
        if b.ndim == 1:
            if not np.any(b):
                return np.zeros_like(b, dtype=float)
            return _jacobi_pcg(self._csr, b, self.tol, self.maxiter)
        return np.column_stack([self.solve(b[:, j]) for j in range(b.shape[1])])


def solve_symmetric(m, b, tol=1e-12):
    """Solve ``m x = b`` for symmetric ``m`` to relative residual ``tol``."""
    return SymmetricSolver(m, tol=tol).solve(b)


def extreme_eigenvalues(m, tol=1e-10):
    """Smallest and largest eigenvalue of a real symmetric matrix.

    Complex (symmetric) input returns the extreme singular values instead,
    which is what the condition number ``sqrt(lmax(M^T M) / lmin(M^T M))``
    needs.
    """
    n = m.shape[0]
    if np.iscomplexobj(m.data if sp.issparse(m) else m):
        s = np.linalg.svd(to_dense(m), compute_uv=False)
        return float(s[-1]), float(s[0])
    if n <= 2048:
        w = sla.eigvalsh(to_dense(m))
        return float(w[0]), float(w[-1])
    csr = as_csr(m)
    try:
        lmax = spla.eigsh(csr, k=1, which="LA", tol=tol, return_eigenvectors=False)[0]
        lmin = spla.eigsh(
            csr, k=1, sigma=0.0, which="LM", tol=tol, return_eigenvectors=False
        )[0]
    except spla.ArpackNoConvergence as exc:
        raise SolverError(f"eigen-solver did not converge: {exc}") from exc
    return float(lmin), float(lmax)


def condition_number(m):
    lo, hi = extreme_eigenvalues(m)
    return hi / lo


def write_matrix_market(path, m, symmetric=False):
    """Write ``m`` as Matrix-Market coordinate data (real or complex)."""
    path = Path(path)
    mat = as_csr(m)
    if symmetric:
        scipy.io.mmwrite(path, sp.tril(mat).tocoo(), symmetry="symmetric")
    else:
        scipy.io.mmwrite(path, mat.tocoo(), symmetry="general")
    return path if path.suffix == ".mtx" else path.with_suffix(".mtx")


def read_matrix_market(path):
    return as_csr(scipy.io.mmread(str(path)))
