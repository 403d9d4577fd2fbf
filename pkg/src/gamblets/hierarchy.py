"""Nested dyadic partition of the unit square and its Haar-type matrices.

Level ``k`` has ``4**k`` square cells of side ``2**-k``. Within a level, cells
are numbered row-major: the cell with integer coordinates ``(cx, cy)`` has flat
index ``cy * 2**k + cx``. This matches the node numbering of the fine finite
element grid, so level ``r`` cells and fine nodes share indices.

A cell is also labelled by its index-tree tuple ``(i_1, ..., i_k)``, where
``i_l in {0, 1, 2, 3}`` is the position of the level-``l`` ancestor inside its
parent, again row-major (``2 * ay + ax``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

#: children per cell
N_CHILDREN = 4
#: scale ratio between consecutive levels
H = 0.5
#: every cell contains a ball of radius DELTA * H_k
DELTA = 0.5
MAX_DEPTH = 12


@dataclass(frozen=True)
class IndexTree:
    depth: int

    def size(self, k):
        return N_CHILDREN**k

    def labels(self, k):
        """All level-``k`` labels, ordered by flat index."""
        return [self.label(k, idx) for idx in range(self.size(k))]

    def label(self, k, idx):
        n = 2**k
        cx, cy = idx % n, idx // n
        out = []
        for b in range(k - 1, -1, -1):
            out.append(2 * ((cy >> b) & 1) + ((cx >> b) & 1))
        return tuple(out)

    def index(self, label):
        cx = cy = 0
        for digit in label:
            cx = 2 * cx + (digit & 1)
            cy = 2 * cy + (digit >> 1)
        return cy * 2 ** len(label) + cx

    @staticmethod
    def truncate(label, s):
        """``i^(s)``: the level-``s`` ancestor label of ``label``."""
        return tuple(label[:s])

    def parent(self, k, idx):
        """Flat index at level ``k - 1`` of the parent of cell ``idx``."""
        n = 2**k
        cx, cy = idx % n, idx // n
        return (cy // 2) * (n // 2) + cx // 2

    def children(self, k, idx):
        """Flat level-``k + 1`` indices of the four children, row-major."""
        n = 2**k
        cx, cy = idx % n, idx // n
        m = 2 * n
        return [(2 * cy + ay) * m + 2 * cx + ax for ay in (0, 1) for ax in (0, 1)]


@dataclass(frozen=True)
class CellHierarchy:
    tree: IndexTree

    @property
    def depth(self):
        return self.tree.depth

    @staticmethod
    def side(k):
        """``H_k = H**k``, the side of a level-``k`` cell."""
        return H**k

    def coords(self, k):
        n = 2**k
        idx = np.arange(n * n)
        return idx % n, idx // n

    def centers(self, k):
        cx, cy = self.coords(k)
        s = self.side(k)
        return np.column_stack([(cx + 0.5) * s, (cy + 0.5) * s])

    def bounds(self, k, idx):
        """``(x0, y0, x1, y1)`` of one cell."""
        n = 2**k
        s = self.side(k)
        cx, cy = idx % n, idx // n
        return cx * s, cy * s, (cx + 1) * s, (cy + 1) * s

    @cached_property
    def fine_nodes(self):
        """Coordinates of the ``4**r`` interior nodes of the fine grid."""
        n = 2**self.depth
        h = 1.0 / (n + 1)
        idx = np.arange(n * n)
        return np.column_stack([(idx % n + 1) * h, (idx // n + 1) * h])


def build_hierarchy(r):
    """Index tree and cell hierarchy of depth ``r`` on the unit square."""
    if not 1 <= r <= MAX_DEPTH:
        raise ValueError(f"depth must lie in [1, {MAX_DEPTH}], got {r}")
    tree = IndexTree(r)
    return tree, CellHierarchy(tree)


def _check_level(tree, k, lo, hi):
    if not lo <= k <= hi:
        raise ValueError(f"level {k} outside [{lo}, {hi}] for depth {tree.depth}")


def build_pi(tree, k):
    """Aggregation matrix ``pi^(k,k+1)`` of shape ``4**k x 4**(k+1)``.

    Row ``i`` holds ``1/2`` on the four children of cell ``i``: the nesting of
    normalized indicator functions of equal-volume cells.
    """
    _check_level(tree, k, 1, tree.depth - 1)
    m = 2 ** (k + 1)
    child = np.arange(m * m)
    parent = (child // m // 2) * (m // 2) + (child % m) // 2
    data = np.full(child.size, 1.0 / math.sqrt(N_CHILDREN))
    return sp.csr_matrix((data, (parent, child)), shape=(4**k, 4 ** (k + 1)))


def build_U(n):
    """Orthogonal-row matrix ``U^(n)`` and its row-normalized version."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    u = np.array([[1.0, -1.0], [1.0, 1.0]])
    for m in range(2, n):
        nxt = np.zeros((m + 1, m + 1))
        nxt[:m, :m] = u
        nxt[m, :] = 1.0
        nxt[m - 1, m] = -m
        u = nxt
    return u, u / np.linalg.norm(u, axis=1, keepdims=True)


def build_W(tree, k):
    """Wavelet matrix ``W^(k)`` of shape ``3 * 4**(k-1) x 4**k``.

    Rows ``3 * s + t`` (``t = 0, 1, 2``) hold the first three rows of the
    normalized ``U^(4)`` placed on the children of parent ``s``.
    """
    _check_level(tree, k, 2, tree.depth)
    _, ubar = build_U(N_CHILDREN)
    n_parent = 4 ** (k - 1)
    rows, cols, vals = [], [], []
    for s in range(n_parent):
        kids = tree.children(k - 1, s)
        for t in range(N_CHILDREN - 1):
            rows.extend([3 * s + t] * N_CHILDREN)
            cols.extend(kids)
            vals.extend(ubar[t])
    w = sp.csr_matrix((vals, (rows, cols)), shape=(3 * n_parent, 4**k))
    w.eliminate_zeros()
    return w


def wavelet_parent(j):
    """Level ``k - 1`` parent index of wavelet row ``j`` of ``W^(k)``."""
    return j // (N_CHILDREN - 1)


def _gap(d):
    return np.maximum(np.abs(d) - 1, 0)


def cell_neighborhood(k, i, rho):
    """``i^rho``: level-``k`` cells within Euclidean distance ``rho * H_k`` of cell ``i``.

    The distance is between closed cells, so touching cells are at distance 0.
    ``i`` may be a flat index or an index-tree label. Returns sorted flat
    indices.
    """
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    if isinstance(i, tuple):
        i = IndexTree(k).index(i)
    n = 2**k
    cx, cy = i % n, i // n
    reach = min(int(math.floor(rho)) + 1, n - 1)
    xs = np.arange(max(cx - reach, 0), min(cx + reach, n - 1) + 1)
    ys = np.arange(max(cy - reach, 0), min(cy + reach, n - 1) + 1)
    gx, gy = np.meshgrid(_gap(xs - cx), _gap(ys - cy))
    keep = gx**2 + gy**2 <= rho * rho * (1 + 1e-12)
    ix, iy = np.meshgrid(xs, ys)
    return np.sort((iy * n + ix)[keep])


def summary_report(tree):
    """Plain-text table of level sizes and ``pi``/``W`` sparsity."""
    lines = [f"{'level':>5} {'cells':>8} {'wavelets':>9} {'nnz(pi)':>9} {'nnz(W)':>8}"]
    for k in range(1, tree.depth + 1):
        nnz_pi = build_pi(tree, k).nnz if k < tree.depth else 0
        nnz_w = build_W(tree, k).nnz if k >= 2 else 0
        n_wav = 3 * 4 ** (k - 1) if k >= 2 else 0
        lines.append(f"{k:>5} {tree.size(k):>8} {n_wav:>9} {nnz_pi:>9} {nnz_w:>8}")
    return "\n".join(lines)
