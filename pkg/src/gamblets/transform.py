"""Gamblet transform: exact and localized multiresolution bases.

Starting from the fine operator ``A^(r) = M + tau K``, each level ``k`` (from
``r`` down to 2) computes

* ``B^(k) = W^(k) A^(k) W^(k)^T`` (stiffness of the chi-gamblets),
* ``D^(k,k-1) = -B^(k)^-1 W^(k) A^(k) pi^(k-1,k)^T``,
* ``R^(k-1,k) = pi^(k-1,k) + D^(k,k-1)^T W^(k)`` (interpolation),
* ``A^(k-1) = R^(k-1,k) A^(k) R^(k-1,k)^T``.

The localized variant solves for ``D`` one column at a time on the wavelets
whose parent cell lies within ``rho_{k-1}`` layers of the column's cell.
Complex ``tau`` is handled by the same recursion with plain transposes.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import TAU_INF, tau_operator
from .hierarchy import H, IndexTree, build_pi, build_W, cell_neighborhood
from .linalg import (
    DENSE_THRESHOLD,
    ScalarField,
    SolverError,
    SymmetricSolver,
    as_csr,
    read_matrix_market,
    to_dense,
    triple_product,
    write_matrix_market,
)

log = logging.getLogger(__name__)


@dataclass
class GambletHierarchy:
    """Per-level output of the transform.

    Dictionaries are keyed by level: ``A[k]`` for ``k = 1..r`` (``A[r]`` is the
    fine operator), ``B[k]``, ``W[k]``, ``pi[k]`` (= ``pi^(k-1,k)``), ``R[k]``
    (= ``R^(k-1,k)``) and ``D[k]`` (= ``D^(k,k-1)``) for ``k = 2..r``.
    ``radii`` is ``None`` for the exact transform.
    """

    tree: IndexTree
    tau: complex | float | None
    field: ScalarField
    A: dict
    B: dict = field(default_factory=dict)
    W: dict = field(default_factory=dict)
    pi: dict = field(default_factory=dict)
    R: dict = field(default_factory=dict)
    D: dict = field(default_factory=dict)
    radii: dict | None = None
    solve_tol: float = 1e-12
    _psi: dict = field(default_factory=dict, repr=False)
    _solvers: dict = field(default_factory=dict, repr=False)

    @property
    def r(self):
        return self.tree.depth

    @property
    def exact(self):
        return self.radii is None

    @property
    def A_phi(self):
        return self.A[self.r]

    def psi(self, k):
        """Coefficients (``4**k x N``) of the level-``k`` psi-gamblets in the fine basis."""
        if k not in self._psi:
            if k == self.r:
                self._psi[k] = sp.identity(self.tree.size(k), dtype=self.field.dtype, format="csr")
            else:
                self._psi[k] = _matmul(self.R[k + 1], self.psi(k + 1))
        return self._psi[k]

    def chi(self, k):
        """Coefficients (``3 * 4**(k-1) x N``) of the level-``k`` chi-gamblets."""
        return _matmul(self.W[k], self.psi(k))

    def basis(self):
        """Stacked ``[Psi^(1); X^(2); ...; X^(r)]`` as a dense ``N x N`` array."""
        blocks = [to_dense(self.psi(1))] + [to_dense(self.chi(k)) for k in range(2, self.r + 1)]
        return np.vstack(blocks)

    def level_solver(self, k, tol=None):
        """Cached solver for ``B^(k)`` (``k >= 2``) or ``A^(1)`` (``k = 1``)."""
        tol = self.solve_tol if tol is None else tol
        if (k, tol) not in self._solvers:
            mat = self.A[1] if k == 1 else self.B[k]
            self._solvers[(k, tol)] = SymmetricSolver(mat, tol=tol)
        return self._solvers[(k, tol)]

    def nnz(self, k):
        mat = self.A[1] if k == 1 else self.B[k]
        return mat.nnz if sp.issparse(mat) else int(np.count_nonzero(mat))


@dataclass
class LocalizedBlockSystem:
    """Principal block of ``B^(k)`` for one coarse index and its right-hand side."""

    level: int
    coarse_index: int
    active: np.ndarray
    matrix: np.ndarray
    rhs: np.ndarray


def _matmul(a, b):
    if sp.issparse(a) and sp.issparse(b):
        return (a @ b).tocsr()
    if sp.issparse(a):
        return a @ to_dense(b)
    if sp.issparse(b):
        return (b.T @ a.T).T
    return a @ b


def _transpose(m):
    return m.T.tocsr() if sp.issparse(m) else m.T


def _direct_solver(m):
    if sp.issparse(m) and m.shape[0] > DENSE_THRESHOLD:
        lu = spla.splu(as_csr(m).tocsc())
        return lu.solve
    dense = to_dense(m)
    lu = sla.lu_factor(dense, check_finite=False)
    return lambda b: sla.lu_solve(lu, b, check_finite=False)


def block_tolerance(k, eps):
    """Default accuracy for the localized block solves at level ``k``.

    Shape ``H**(3 - k + k d / 2) eps / k**2`` with ``d = 2`` and unit constant.
    """
    return H ** (3 - k + k) * eps / k**2


def localized_block_solve(system, tol=1e-12):
    """Solve one localized block system; return ``(indices, values)`` of a column of ``D``."""
    if system.active.size == 0:
        raise ValueError("empty active set")
    mat, rhs = system.matrix, system.rhs
    n = mat.shape[0]
    try:
        if n <= DENSE_THRESHOLD:
            if np.iscomplexobj(mat):
                y = sla.solve(mat, rhs, assume_a="sym", check_finite=False)
            else:
                y = sla.solve(mat, rhs, assume_a="pos", check_finite=False)
        else:
            y = SymmetricSolver(as_csr(mat), tol=tol).solve(rhs)
    except (np.linalg.LinAlgError, SolverError) as exc:
        raise SolverError(
            f"block solve failed at level {system.level}, coarse index {system.coarse_index}: {exc}"
        ) from exc
    return system.active, y


def _localized_D(Bk, C, k, rho, tol):
    """Assemble ``D^(k,k-1)`` column by column from localized block solves."""
    n_coarse = C.shape[1]
    Bk = as_csr(Bk)
    C = C.tocsc()
    rows, cols, vals = [], [], []
    for i in range(n_coarse):
        nb = cell_neighborhood(k - 1, i, rho)
        active = (3 * nb[:, None] + np.arange(3)[None, :]).ravel()
        sub = Bk[active][:, active].toarray()
        rhs = np.zeros(active.size, dtype=C.dtype)
        lo, hi = C.indptr[i], C.indptr[i + 1]
        crow = C.indices[lo:hi]
        pos = np.searchsorted(active, crow)
        pos_clip = np.minimum(pos, active.size - 1)
        hit = active[pos_clip] == crow
        rhs[pos_clip[hit]] = -C.data[lo:hi][hit]
        system = LocalizedBlockSystem(k, i, active, sub, rhs)
        idx, y = localized_block_solve(system, tol)
        rows.append(idx)
        cols.append(np.full(idx.size, i))
        vals.append(y)
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(Bk.shape[0], n_coarse),
    )


def gamblet_transform(A_phi, tree, radii=None, eps=1e-12, tau=None):
    """Run the transform on an explicit fine operator.

    ``radii`` maps level ``k`` (``1..r-1``) to the localization radius
    ``rho_k`` in layers of cells; ``None`` runs the exact transform.
    """
    r = tree.depth
    if A_phi.shape != (tree.size(r), tree.size(r)):
        raise ValueError(f"operator shape {A_phi.shape} does not match depth {r}")
    fld = ScalarField.of(A_phi.data if sp.issparse(A_phi) else A_phi)
    dtype = fld.dtype
    gh = GambletHierarchy(tree, tau, fld, A={r: A_phi.astype(dtype)}, radii=radii, solve_tol=eps)
    if radii is not None:
        missing = [k for k in range(1, r) if k not in radii]
        if missing:
            raise ValueError(f"missing localization radii for levels {missing}")
        if any(radii[k] < 0 for k in radii):
            raise ValueError("localization radii must be nonnegative")
    for k in range(r, 1, -1):
        Wk = build_W(tree, k).astype(dtype)
        Pk = build_pi(tree, k - 1).astype(dtype)
        Ak = gh.A[k]
        Bk = triple_product(Wk, Ak, Wk.T.tocsr()) if sp.issparse(Ak) else Wk @ (Wk @ Ak.T).T
        if radii is None:
            C = to_dense(_matmul(_matmul(Wk, Ak), Pk.T.tocsr()))
            try:
                Dk = -_direct_solver(Bk)(C)
            except (RuntimeError, np.linalg.LinAlgError) as exc:
                raise SolverError(f"B^({k}) factorization failed: {exc}") from exc
            Rk = Pk.toarray() + (Wk.T @ Dk).T
            Anext = Rk @ to_dense(_matmul(Ak, Rk.T))
        else:
            C = as_csr(Wk @ as_csr(Ak) @ Pk.T)
            Dk = _localized_D(Bk, C, k, radii[k - 1], block_tolerance(k, eps))
            Rk = (Pk + Dk.T @ Wk).tocsr()
            Anext = triple_product(Rk, as_csr(Ak), Rk.T.tocsr())
        gh.B[k], gh.W[k], gh.pi[k], gh.D[k], gh.R[k] = Bk, Wk, Pk, Dk, Rk
        gh.A[k - 1] = Anext
    return gh


def exact_transform(asm, cells, tau, eps=1e-12):
    """Exact gamblet transform of ``M + tau K`` (``tau = TAU_INF`` for ``K``)."""
    op = tau_operator(asm, tau)
    return gamblet_transform(op, cells.tree, None, eps=eps, tau=tau)


def uniform_radii(r, nl):
    return {k: nl for k in range(1, r)}


def localized_transform(asm, cells, tau, rho, eps=1e-12):
    """Localized gamblet transform; ``rho`` is a uniform layer count ``nl`` or a per-level dict."""
    r = cells.depth
    radii = uniform_radii(r, rho) if np.isscalar(rho) else dict(rho)
    op = tau_operator(asm, tau)
    return gamblet_transform(op, cells.tree, radii, eps=eps, tau=tau)


def theoretical_radii(r, eps, constant=1.0):
    """Per-level radii ``C ((1 + 1/ln(1/H)) ln(1/H_k) + ln(1/eps))``, rounded up."""
    ln_h = math.log(1 / H)
    return {
        k: math.ceil(constant * ((1 + 1 / ln_h) * k * ln_h + math.log(1 / eps)))
        for k in range(1, r)
    }


def decay_profile(gh, k, i, radii=None):
    """Fraction of the energy of ``psi_i^(k)`` carried by fine nodes outside ``Omega_{i,n}``.

    ``Omega_{i,n}`` is the set of fine cells within distance ``n H_k`` of the
    level-``k`` cell ``i``. The energy carried by node ``j`` is
    ``A_jj |c_j|**2`` for gamblet coefficients ``c``, which keeps the profile
    nonincreasing in ``n``. Returns a list of ``(n, fraction)``.
    """
    r = gh.r
    c = np.asarray(to_dense(gh.psi(k)[[i]])).ravel()
    weight = np.real(np.asarray(as_csr(gh.A_phi).diagonal())) * np.abs(c) ** 2
    total = weight.sum()
    side_k, side_r = H**k, H**r
    n_k = 2**k
    cx, cy = (i % n_k + 0.5) * side_k, (i // n_k + 0.5) * side_k
    n_r = 2**r
    idx = np.arange(n_r * n_r)
    fx, fy = (idx % n_r + 0.5) * side_r, (idx // n_r + 0.5) * side_r
    half = 0.5 * (side_k + side_r)
    gx = np.maximum(np.abs(fx - cx) - half, 0.0)
    gy = np.maximum(np.abs(fy - cy) - half, 0.0)
    dist = np.hypot(gx, gy) / side_k
    if radii is None:
        radii = np.arange(0, int(math.ceil(dist.max())) + 1)
    out = []
    for n in radii:
        outside = dist > n * (1 + 1e-12)
        out.append((float(n), float(weight[outside].sum() / total)))
    return out


def _tau_to_json(tau):
    if tau is None:
        return None
    if isinstance(tau, float) and math.isinf(tau):
        return "inf"
    tau = complex(tau)
    return [tau.real, tau.imag]


def _tau_from_json(obj):
    if obj is None:
        return None
    if obj == "inf":
        return TAU_INF
    re, im = obj
    return complex(re, im) if im else float(re)


def save_hierarchy(gh, directory):
    """Write every level matrix as Matrix-Market plus a ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}

    def put(name, mat, symmetric):
        path = write_matrix_market(directory / f"{name}.mtx", mat, symmetric=symmetric)
        files[name] = path.name

    for k, mat in gh.A.items():
        put(f"A_{k}", mat, True)
    for k in gh.B:
        put(f"B_{k}", gh.B[k], True)
        put(f"R_{k}", gh.R[k], False)
        put(f"D_{k}", gh.D[k], False)
    manifest = {
        "depth": gh.r,
        "tau": _tau_to_json(gh.tau),
        "field": gh.field.value,
        "radii": None if gh.radii is None else {str(k): v for k, v in gh.radii.items()},
        "solve_tol": gh.solve_tol,
        "files": files,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return directory


def load_hierarchy(directory):
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    tree = IndexTree(manifest["depth"])
    fld = ScalarField(manifest["field"])
    files = manifest["files"]

    def get(name):
        return read_matrix_market(directory / files[name]).astype(fld.dtype)

    r = tree.depth
    radii = manifest["radii"]
    gh = GambletHierarchy(
        tree,
        _tau_from_json(manifest["tau"]),
        fld,
        A={k: get(f"A_{k}") for k in range(1, r + 1)},
        radii=None if radii is None else {int(k): v for k, v in radii.items()},
        solve_tol=manifest["solve_tol"],
    )
    for k in range(2, r + 1):
        gh.B[k], gh.R[k], gh.D[k] = get(f"B_{k}"), get(f"R_{k}"), get(f"D_{k}")
        gh.W[k] = build_W(tree, k).astype(fld.dtype)
        gh.pi[k] = build_pi(tree, k - 1).astype(fld.dtype)
    return gh
