"""Level-wise spectral reports, error norms and CSV export."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .linalg import SolverError, as_csr, extreme_eigenvalues, to_dense


@dataclass
class LevelReport:
    """``cond`` of ``A^(1)`` (level 1) or ``B^(k)``; complex blocks use singular values."""

    level: int
    cond: float
    lmin: float
    lmax: float
    nnz: int
    size: int
    converged: bool = True


@dataclass
class ErrorReport:
    """``h1 = |e|_K``, ``l2 = |e|_M`` with the unit-density mass, ``energy = sqrt(|e|_K**2 + |e|_{M_mu}**2)``.

    ``relative_energy`` is ``energy`` divided by the same norm of the reference.
    """

    h1: float
    l2: float
    energy: float
    relative_energy: float


def condition_report(gh):
    out = []
    for k in range(1, gh.r + 1):
        mat = gh.A[1] if k == 1 else gh.B[k]
        try:
            lo, hi = extreme_eigenvalues(mat)
            out.append(LevelReport(k, hi / lo, lo, hi, gh.nnz(k), mat.shape[0]))
        except SolverError:
            out.append(LevelReport(k, math.nan, math.nan, math.nan, gh.nnz(k), mat.shape[0], False))
    return out


def _generalized_range(a, b):
    n = a.shape[0]
    if n <= 4096:
        w = sla.eigh(to_dense(a), to_dense(b), eigvals_only=True)
        return float(w[0]), float(w[-1])
    a, b = as_csr(a), as_csr(b)
    hi = spla.eigsh(a, k=1, M=b, which="LA", return_eigenvectors=False)[0]
    lo = spla.eigsh(a, k=1, M=b, sigma=0.0, which="LM", return_eigenvectors=False)[0]
    return float(lo), float(hi)


def _gram(c, m):
    cm = c @ m if not hasattr(c, "tocsr") else c @ m
    return to_dense(cm @ c.T)


def subband_eigen_ranges(gh, K, M_unit):
    """Extreme generalized eigenvalues of ``(C K C^T, C M C^T)`` per level.

    ``C`` is ``Psi^(1)`` at level 1 and ``X^(k)`` above; level 0 is the whole
    finite element space. The norm ratios ``|psi|_a / |psi|_L2`` are the
    square roots of these values.
    """
    out = {0: _generalized_range(K, M_unit)}
    for k in range(1, gh.r + 1):
        c = gh.psi(1) if k == 1 else gh.chi(k)
        out[k] = _generalized_range(_gram(c, K), _gram(c, M_unit))
    return out


def error_norms(q, q_ref, asm):
    e = np.asarray(q) - np.asarray(q_ref)

    def quad(m, v):
        return max(float(np.real(np.vdot(v, m @ v))), 0.0)

    h1 = math.sqrt(quad(asm.K, e))
    l2 = math.sqrt(quad(asm.M_unit, e))
    energy = math.sqrt(quad(asm.K, e) + quad(asm.M, e))
    ref = math.sqrt(quad(asm.K, q_ref) + quad(asm.M, q_ref))
    return ErrorReport(h1, l2, energy, energy / ref if ref > 0 else (0.0 if energy == 0 else math.inf))


def loglog_slope(x, y):
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def linear_fit(x, y):
    """``(slope, intercept, r_squared)`` of a least-squares line."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    slope, icpt = np.polyfit(x, y, 1)
    res = y - (slope * x + icpt)
    ss = float(((y - y.mean()) ** 2).sum())
    return float(slope), float(icpt), 1.0 - float(res @ res) / ss if ss > 0 else 1.0


def observed_orders(dts, errors):
    """Pairwise orders ``log(e_i / e_{i+1}) / log(dt_i / dt_{i+1})``."""
    d, e = np.asarray(dts, float), np.asarray(errors, float)
    return np.log(e[:-1] / e[1:]) / np.log(d[:-1] / d[1:])


def write_figure_csv(path, figure_id, rows):
    """Write ``(figure, index, metric, value)`` rows; ``rows`` yields ``(index, metric, value)``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["figure", "index", "metric", "value"])
        for idx, metric, value in rows:
            out.writerow([figure_id, idx, metric, repr(float(value))])
    return path


def condition_rows(reports):
    for rep in reports:
        d = asdict(rep)
        for key in ("cond", "lmin", "lmax", "nnz", "size"):
            yield rep.level, key, d[key]
