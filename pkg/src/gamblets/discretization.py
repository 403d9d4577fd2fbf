"""Bilinear finite elements on the ``2**r x 2**r`` interior-node grid of the unit square.

The fine mesh has ``(2**r + 1)**2`` square elements of side
``h = 1 / (2**r + 1)``; homogeneous Dirichlet nodes on the boundary are
eliminated. Coefficients are piecewise constant per element, so element
matrices are integrated in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .linalg import ScalarField

#: sentinel for ``zeta = inf``: the operator is the stiffness matrix alone
TAU_INF = math.inf


@dataclass(frozen=True)
class FemGrid:
    r: int

    @property
    def n(self):
        """Interior nodes per axis."""
        return 2**self.r

    @property
    def n_cells(self):
        return self.n + 1

    @property
    def h(self):
        return 1.0 / (self.n + 1)

    @property
    def size(self):
        return self.n**2

    @cached_property
    def nodes(self):
        idx = np.arange(self.size)
        return np.column_stack([(idx % self.n + 1) * self.h, (idx // self.n + 1) * self.h])

    @cached_property
    def connectivity(self):
        """Per element the 4 global node ids (``-1`` for boundary), local order ``2*ay + ax``."""
        e = np.arange(self.n_cells)
        ex, ey = np.meshgrid(e, e, indexing="xy")
        ex, ey = ex.ravel(), ey.ravel()
        out = np.empty((ex.size, 4), dtype=np.int64)
        for ay in (0, 1):
            for ax in (0, 1):
                gx, gy = ex + ax, ey + ay
                inside = (gx >= 1) & (gx <= self.n) & (gy >= 1) & (gy <= self.n)
                out[:, 2 * ay + ax] = np.where(inside, (gy - 1) * self.n + gx - 1, -1)
        return out


@dataclass
class CoefficientField:
    """Piecewise-constant ``a`` and ``mu`` on the ``(2**r+1)**2`` elements.

    Arrays are indexed ``[ix, iy]`` with ``ix`` along ``x_1``.
    """

    a: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.mu = np.asarray(self.mu, dtype=float)
        if self.a.shape != self.mu.shape or self.a.ndim != 2:
            raise ValueError(f"a {self.a.shape} and mu {self.mu.shape} must be equal 2d shapes")
        if not (np.all(np.isfinite(self.a)) and self.a.min() > 0):
            raise ValueError("a must be finite and strictly positive")
        if not (np.all(np.isfinite(self.mu)) and self.mu.min() > 0):
            raise ValueError("mu must be finite and strictly positive")

    @property
    def contrast(self):
        return self.a.max() / self.a.min()

    def save(self, path, which="a"):
        """Write one field as text, one line per ``ix``."""
        np.savetxt(path, getattr(self, which), fmt="%.17g")

    @classmethod
    def load(cls, a_path, mu_path=None):
        a = np.loadtxt(a_path, ndmin=2)
        mu = np.loadtxt(mu_path, ndmin=2) if mu_path else np.ones_like(a)
        return cls(a, mu)


def multiscale_coefficient(r):
    """Multiscale rough coefficient: a product of ``r`` oscillating factors; ``mu = 1``."""
    if r < 1:
        raise ValueError("r must be >= 1")
    m = 2**r + 1
    i, j = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    x, y = i / m, j / m
    a = np.ones((m, m))
    for k in range(1, r + 1):
        a *= (1 + 0.5 * np.cos(2**k * np.pi * (x + y))) * (
            1 + 0.5 * np.sin(2**k * np.pi * (y - 3 * x))
        )
    return CoefficientField(a, np.ones_like(a))


def laplacian_coefficient(r):
    m = 2**r + 1
    return CoefficientField(np.ones((m, m)), np.ones((m, m)))


# 1d reference element on [0, h]: mass h/6 [[2,1],[1,2]], stiffness 1/h [[1,-1],[-1,1]]
_M1 = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
_K1 = np.array([[1.0, -1.0], [-1.0, 1.0]])
# local order 2*ay + ax matches np.kron(y_factor, x_factor)
_MASS_LOCAL = np.kron(_M1, _M1)  # times h**2
_STIFF_LOCAL = np.kron(_M1, _K1) + np.kron(_K1, _M1)  # h-independent in 2d


@dataclass
class OperatorAssembly:
    grid: FemGrid
    coeff: CoefficientField
    M: sp.csr_matrix
    K: sp.csr_matrix

    @cached_property
    def M_unit(self):
        """Mass matrix with ``mu = 1`` (the plain L2 Gram matrix)."""
        if np.all(self.coeff.mu == 1.0):
            return self.M
        return _assemble_local(self.grid, np.ones(self.grid.n_cells**2), _MASS_LOCAL * self.grid.h**2)


def _assemble_local(grid, weights, local):
    conn = grid.connectivity
    rows = np.repeat(conn, 4, axis=1)
    cols = np.tile(conn, (1, 4))
    vals = weights[:, None] * local.ravel()[None, :]
    keep = (rows >= 0) & (cols >= 0)
    mat = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(grid.size, grid.size))
    return mat.tocsr()


def assemble(grid, coeff):
    """Fine-scale mass ``M`` and stiffness ``K`` with Dirichlet nodes removed."""
    expected = (grid.n_cells, grid.n_cells)
    if coeff.a.shape != expected:
        raise ValueError(f"coefficient shape {coeff.a.shape} does not match grid {expected}")
    # element e = ey * n_cells + ex; coefficient arrays are [ix, iy]
    a = coeff.a.T.ravel()
    mu = coeff.mu.T.ravel()
    M = _assemble_local(grid, mu, _MASS_LOCAL * grid.h**2)
    K = _assemble_local(grid, a, _STIFF_LOCAL)
    return OperatorAssembly(grid, coeff, M, K)


def tau_operator(asm, tau, field=None):
    """``M + tau * K``; ``tau = TAU_INF`` gives ``K`` alone.

    This is ``tau`` times the zeta-operator ``(4/zeta**2) M + K`` with
    ``tau = zeta**2 / 4``. The gamblet transform is invariant under that
    global scaling.
    """
    if tau == 0:
        raise ValueError("tau = 0 is not allowed")
    if isinstance(tau, float) and math.isinf(tau):
        op = asm.K.copy()
    else:
        if not np.isfinite(tau):
            raise ValueError(f"tau must be finite or TAU_INF, got {tau}")
        op = (asm.M + tau * asm.K).tocsr()
    field = field or ScalarField.of(tau)
    return op.astype(field.dtype)


_GAUSS = np.array([0.5 - math.sqrt(3) / 6, 0.5 + math.sqrt(3) / 6])


def load_vector(grid, g, t=0.0, weight=None):
    """``f_i = int phi_i g(., t)`` by 2x2 Gauss quadrature per element.

    ``g`` is called as ``g(x1, x2, t)`` on arrays. ``weight`` is an optional
    piecewise-constant factor indexed ``[ix, iy]`` like the coefficients
    (``mu`` for momenta).
    """
    h = grid.h
    e = np.arange(grid.n_cells)
    ex, ey = np.meshgrid(e, e, indexing="xy")
    ex, ey = ex.ravel(), ey.ravel()
    vals = np.zeros((ex.size, 4), dtype=np.result_type(float, g(0.5, 0.5, t)))
    for sx in _GAUSS:
        for sy in _GAUSS:
            gv = np.broadcast_to(g((ex + sx) * h, (ey + sy) * h, t), ex.shape)
            shape = np.array([(1 - sx) * (1 - sy), sx * (1 - sy), (1 - sx) * sy, sx * sy])
            vals += gv[:, None] * shape[None, :]
    vals *= h * h / 4.0
    if weight is not None:
        vals *= np.asarray(weight, dtype=float).T.ravel()[:, None]
    conn = grid.connectivity
    keep = conn >= 0
    return np.bincount(conn[keep], weights=vals[keep].real, minlength=grid.size) + (
        1j * np.bincount(conn[keep], weights=vals[keep].imag, minlength=grid.size)
        if np.iscomplexobj(vals)
        else 0.0
    )


def save_coefficient(coeff, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    coeff.save(directory / "a.txt", "a")
    coeff.save(directory / "mu.txt", "mu")
    return directory
