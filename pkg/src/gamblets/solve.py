"""Multiresolution linear solve on a gamblet hierarchy.

One restriction sweep followed by independent solves on every subband. For
an exact hierarchy the recombined vector is the finite element solution.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg import SolverError, spmv, to_dense


@dataclass
class SubbandSolution:
    """Coarse coefficients ``U^(1)``, subband coefficients ``w^(k)`` and the recombined vector."""

    coarse: np.ndarray
    subbands: dict
    recombined: np.ndarray
    depth: int = 0
    _gh: object = field(default=None, repr=False)

    def component(self, k):
        """Fine-basis vector of level ``k``: the coarse part for ``k = 1``, else the ``k``-th subband."""
        if k == 1:
            return _apply_transpose(self._gh.psi(1), self.coarse)
        return _apply_transpose(self._gh.chi(k), self.subbands[k])

    def to_csv(self, path):
        """One row per basis function: ``level, label, coefficient`` (complex parts split)."""
        tree = self._gh.tree
        path = Path(path)
        with path.open("w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["level", "label", "coefficient_re", "coefficient_im"])
            for idx, val in enumerate(self.coarse):
                label = "".join(map(str, tree.label(1, idx)))
                out.writerow([1, label, repr(float(np.real(val))), repr(float(np.imag(val)))])
            for k in sorted(self.subbands):
                for j, val in enumerate(self.subbands[k]):
                    parent = "".join(map(str, tree.label(k - 1, j // 3)))
                    out.writerow(
                        [k, f"{parent}:{j % 3}", repr(float(np.real(val))), repr(float(np.imag(val)))]
                    )
        return path


def _apply_transpose(m, v):
    return np.asarray(m.T @ v).ravel() if v.ndim == 1 else m.T @ v


def level_tolerance(r, eps):
    """Per-subband relative accuracy ``eps / (2 r)``."""
    return eps / (2 * r)


def solve(gh, g, eps=1e-12, order=None):
    """Solve ``A^phi u = g`` through the subband decomposition.

    ``order`` permutes the order in which the independent subband solves are
    done; it has no effect on the result.
    """
    r = gh.r
    g = np.asarray(g)
    if g.shape[0] != gh.A_phi.shape[0]:
        raise ValueError(f"load vector of length {g.shape[0]} does not match N = {gh.A_phi.shape[0]}")
    dtype = np.result_type(g, gh.field.dtype)
    tol = level_tolerance(r, eps)
    loads = {r: g.astype(dtype)}
    for k in range(r, 1, -1):
        loads[k - 1] = spmv(gh.R[k], loads[k])
    levels = list(range(1, r + 1)) if order is None else list(order)
    if sorted(levels) != list(range(1, r + 1)):
        raise ValueError(f"order must permute levels 1..{r}")
    coarse, subbands = None, {}
    for k in levels:
        try:
            if k == 1:
                coarse = gh.level_solver(1, tol).solve(loads[1])
            else:
                subbands[k] = gh.level_solver(k, tol).solve(spmv(gh.W[k], loads[k]))
        except (SolverError, np.linalg.LinAlgError) as exc:
            raise SolverError(f"subband solve failed at level {k}: {exc}") from exc
    u = _apply_transpose(gh.psi(1), coarse)
    for k in range(2, r + 1):
        u = u + _apply_transpose(gh.chi(k), subbands[k])
    return SubbandSolution(coarse, subbands, np.asarray(to_dense(u)).ravel(), r, gh)


def subband_components(gh, q, eps=1e-12):
    """Decompose a fine-basis vector ``q`` into its coarse part and subbands."""
    q = np.asarray(q)
    return solve(gh, spmv(gh.A_phi, q), eps)
