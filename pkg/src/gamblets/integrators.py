"""Implicit time integrators whose linear systems are all of the form ``M + tau K``.

Wave problems ``q' = M^-1 p, p' = -K q + f`` and parabolic problems
``M q' + K q = f`` are advanced by the schemes below. Every implicit solve is
delegated to a backend that owns one solver per distinct ``tau``: a sparse
direct factorization (``DirectBackend``) or a gamblet hierarchy
(``GambletBackend``). Fully implicit Runge-Kutta methods are block
diagonalized through the eigendecomposition of their RK matrix, which turns
the coupled stage system into ``s`` independent, possibly complex, shifted
systems.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import load_vector
from .linalg import SolverError, as_csr
from .solve import solve as gamblet_solve
from .solve import subband_components
from .transform import exact_transform, localized_transform

log = logging.getLogger(__name__)

#: TR-BDF2 stage fraction
GAMMA = 2.0 - math.sqrt(2.0)
#: SDIRK3 diagonal, root of 1/6 - 3/2 x + 3 x**2 - x**3 near 0.4359
SDIRK3_LAMBDA = 0.43586652150845899941601945


@dataclass(frozen=True)
class ButcherTableau:
    name: str
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    order: int

    @property
    def stages(self):
        return len(self.b)

    @property
    def lower_triangular(self):
        return bool(np.all(np.triu(self.A, 1) == 0))

    @cached_property
    def eig(self):
        """``(lam, S, S^-1)`` with ``A = S diag(lam) S^-1``; real eigenvalues are returned as real."""
        lam, S = np.linalg.eig(self.A)
        if np.linalg.cond(S) > 1e10:
            raise ValueError(f"RK matrix of {self.name} is not diagonalizable")
        lam = np.array([complex(x) if abs(x.imag) > 1e-14 * abs(x) else x.real for x in lam], dtype=object)
        return lam, S, np.linalg.inv(S)


def _tableau(name, A, b, c, order):
    return ButcherTableau(name, np.array(A, dtype=float), np.array(b, dtype=float), np.array(c, dtype=float), order)


def _sdirk3():
    lam = SDIRK3_LAMBDA
    b1 = (-6 * lam**2 + 16 * lam - 1) / 4
    b2 = (6 * lam**2 - 20 * lam + 5) / 4
    A = [[lam, 0, 0], [(1 - lam) / 2, lam, 0], [b1, b2, lam]]
    return _tableau("sdirk3", A, [b1, b2, lam], [lam, (1 + lam) / 2, 1.0], 3)


_S3, _S6 = math.sqrt(3), math.sqrt(6)

TABLEAUX = {
    "euler": _tableau("euler", [[1.0]], [1.0], [1.0], 1),
    "midpoint": _tableau("midpoint", [[0.5]], [1.0], [0.5], 2),
    "dirk3": _tableau(
        "dirk3",
        [
            [0.0585104413426586, 0.0, 0.0],
            [0.0389225469556698, 0.7675348853239251, 0.0],
            [0.1613387070350185, -0.5944302919004032, 0.7165457925008468],
        ],
        [0.1008717264855379, 0.4574278841698629, 0.4417003893445992],
        [0.0585104413419415, 0.8064574322792799, 0.2834542075672883],
        3,
    ),
    "sdirk3": _sdirk3(),
    "gl2": _tableau(
        "gl2",
        [[0.25, 0.25 - _S3 / 6], [0.25 + _S3 / 6, 0.25]],
        [0.5, 0.5],
        [0.5 - _S3 / 6, 0.5 + _S3 / 6],
        4,
    ),
    "lobatto3c": _tableau(
        "lobatto3c",
        [[1 / 6, -1 / 3, 1 / 6], [1 / 6, 5 / 12, -1 / 12], [1 / 6, 2 / 3, 1 / 6]],
        [1 / 6, 2 / 3, 1 / 6],
        [0.0, 0.5, 1.0],
        4,
    ),
    "radau2a": _tableau(
        "radau2a",
        [
            [11 / 45 - 7 * _S6 / 360, 37 / 225 - 169 * _S6 / 1800, -2 / 225 + _S6 / 75],
            [37 / 225 + 169 * _S6 / 1800, 11 / 45 + 7 * _S6 / 360, -2 / 225 - _S6 / 75],
            [4 / 9 - _S6 / 36, 4 / 9 + _S6 / 36, 1 / 9],
        ],
        [4 / 9 - _S6 / 36, 4 / 9 + _S6 / 36, 1 / 9],
        [2 / 5 - _S6 / 10, 2 / 5 + _S6 / 10, 1.0],
        5,
    ),
}

WAVE_SCHEMES = ("midpoint", "gl2", "radau2a", "lobatto3c")
PARABOLIC_SCHEMES = ("euler", "trbdf2", "dirk3", "sdirk3", "gl2", "radau2a", "lobatto3c")


@dataclass
class WaveState:
    q: np.ndarray
    p: np.ndarray
    t: float = 0.0


@dataclass
class ParabolicState:
    q: np.ndarray
    t: float = 0.0


class _Backend:
    """Solver cache keyed by ``tau``; counts solves per ``tau``."""

    def __init__(self, M, K):
        self.M = as_csr(M)
        self.K = as_csr(K)
        self._solvers = {}
        self.solve_counts = {}

    def _build(self, tau):
        raise NotImplementedError

    def prepare(self, taus, max_threads=1):
        todo = [t for t in dict.fromkeys(taus) if t not in self._solvers]
        if max_threads > 1 and len(todo) > 1:
            with ThreadPoolExecutor(max_workers=max_threads) as pool:
                built = list(pool.map(self._build, todo))
        else:
            built = [self._build(t) for t in todo]
        self._solvers.update(zip(todo, built))

    def solve(self, tau, rhs):
        if tau not in self._solvers:
            self.prepare([tau])
        self.solve_counts[tau] = self.solve_counts.get(tau, 0) + 1
        try:
            return self._solvers[tau](rhs)
        except (SolverError, RuntimeError) as exc:
            raise SolverError(f"solve with tau={tau} failed: {exc}") from exc

    @property
    def n_solves(self):
        return sum(self.solve_counts.values())

    @property
    def taus(self):
        return list(self._solvers)

    @cached_property
    def _mass_lu(self):
        return spla.splu(self.M.tocsc())

    def mass_solve(self, v):
        return self._mass_lu.solve(np.asarray(v, dtype=float))


class DirectBackend(_Backend):
    """Sparse LU of ``M + tau K`` per ``tau``."""

    def _build(self, tau):
        op = self.M + tau * self.K
        lu = spla.splu(as_csr(op).tocsc())
        if np.iscomplexobj(op.data):
            return lambda b: lu.solve(np.asarray(b, dtype=complex))

        def real_solve(b):
            b = np.asarray(b)
            if np.iscomplexobj(b):
                return lu.solve(np.ascontiguousarray(b.real)) + 1j * lu.solve(np.ascontiguousarray(b.imag))
            return lu.solve(b)

        return real_solve


class GambletBackend(_Backend):
    """One gamblet hierarchy per ``tau``; ``nl=None`` gives exact hierarchies."""

    def __init__(self, asm, cells, nl=None, eps=1e-10):
        super().__init__(asm.M, asm.K)
        self.asm = asm
        self.cells = cells
        self.nl = nl
        self.eps = eps
        self.hierarchies = {}

    def hierarchy(self, tau):
        if tau not in self.hierarchies:
            if self.nl is None:
                self.hierarchies[tau] = exact_transform(self.asm, self.cells, tau, eps=self.eps)
            else:
                self.hierarchies[tau] = localized_transform(self.asm, self.cells, tau, self.nl, eps=self.eps)
        return self.hierarchies[tau]

    def _build(self, tau):
        gh = self.hierarchy(tau)
        return lambda b: gamblet_solve(gh, b, self.eps).recombined


@dataclass
class IntegratorPlan:
    """Scheme, step and horizon plus the backend holding one solver per ``tau``."""

    scheme: str
    dt: float
    T: float
    backend: _Backend
    stats: dict = field(default_factory=lambda: {"max_imag_residue": 0.0})

    def __post_init__(self):
        if self.scheme not in TABLEAUX and self.scheme != "trbdf2":
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def n_steps(self):
        n = round(self.T / self.dt)
        if abs(n * self.dt - self.T) > 1e-12 * max(1.0, self.T):
            raise ValueError(f"dt={self.dt} does not divide T={self.T}")
        return n

    def wave_taus(self):
        if self.scheme == "midpoint":
            return [self.dt**2 / 4]
        lam, _, _ = TABLEAUX[self.scheme].eig
        return list(dict.fromkeys(self.dt**2 * x**2 for x in lam))

    def parabolic_taus(self):
        s = self.scheme
        if s == "euler":
            return [self.dt]
        if s == "trbdf2":
            return [GAMMA * self.dt / 2]
        tab = TABLEAUX[s]
        if tab.lower_triangular:
            return list(dict.fromkeys(float(self.dt * a) for a in np.diag(tab.A)))
        lam, _, _ = tab.eig
        return list(dict.fromkeys(self.dt * x for x in lam))

    def with_dt(self, dt):
        return replace(self, dt=dt)


def _f(forcing, t, n):
    return np.zeros(n) if forcing is None else np.asarray(forcing(t))


def midpoint_step(state, plan, forcing=None):
    """Implicit midpoint for the wave system with one ``M + dt**2/4 K`` solve."""
    dt, M, K = plan.dt, plan.backend.M, plan.backend.K
    f = _f(forcing, state.t + dt / 2, state.q.size)
    rhs = M @ state.q - dt**2 / 4 * (K @ state.q) + dt * state.p + dt**2 / 2 * f
    q1 = plan.backend.solve(dt**2 / 4, rhs)
    p1 = state.p - dt * (K @ (state.q + q1)) / 2 + dt * f
    return WaveState(q1, p1, state.t + dt)


def implicit_euler_step(state, plan, forcing=None):
    dt, M = plan.dt, plan.backend.M
    f = _f(forcing, state.t + dt, state.q.size)
    q1 = plan.backend.solve(dt, M @ state.q + dt * f)
    return ParabolicState(q1, state.t + dt)


def trbdf2_step(state, plan, forcing=None):
    """TR-BDF2 with ``gamma = 2 - sqrt(2)``: both stages invert ``M + gamma dt / 2 K``."""
    dt, M, K = plan.dt, plan.backend.M, plan.backend.K
    g = GAMMA
    tau = g * dt / 2
    n = state.q.size
    f0, fg, f1 = (_f(forcing, state.t + c * dt, n) for c in (0.0, g, 1.0))
    qg = plan.backend.solve(tau, M @ state.q - tau * (K @ state.q) + tau * (f0 + fg))
    rhs = (M @ qg) / (g * (2 - g)) - (1 - g) ** 2 / (g * (2 - g)) * (M @ state.q) + (1 - g) / (2 - g) * dt * f1
    q1 = plan.backend.solve(tau, rhs)
    return ParabolicState(q1, state.t + dt)


def dirk_step(state, tableau, plan, forcing=None):
    """Diagonally implicit RK: stage ``i`` inverts ``M + dt A_ii K``."""
    if not tableau.lower_triangular:
        raise ValueError(f"{tableau.name} is not diagonally implicit")
    dt, K = plan.dt, plan.backend.K
    n = state.q.size
    ks = []
    for i in range(tableau.stages):
        qi = state.q + dt * sum((tableau.A[i, j] * ks[j] for j in range(i)), np.zeros(n))
        rhs = -(K @ qi) + _f(forcing, state.t + tableau.c[i] * dt, n)
        try:
            ks.append(plan.backend.solve(float(dt * tableau.A[i, i]), rhs))
        except SolverError as exc:
            raise SolverError(f"stage {i} of {tableau.name}: {exc}") from exc
    q1 = state.q + dt * sum(b * k for b, k in zip(tableau.b, ks))
    return ParabolicState(q1, state.t + dt)


def _realify(v, plan):
    v = np.asarray(v)
    if np.iscomplexobj(v):
        scale = max(np.linalg.norm(v), np.finfo(float).tiny)
        plan.stats["max_imag_residue"] = max(plan.stats["max_imag_residue"], np.linalg.norm(v.imag) / scale)
        return v.real.copy()
    return v


def _transformed_solves(plan, tableau, taus, rhs_fn):
    """Solve the ``s`` decoupled systems; ``rhs_fn(i)`` gives the ``i``-th transformed right-hand side."""
    out = []
    for i, tau in enumerate(taus):
        try:
            out.append(plan.backend.solve(tau, rhs_fn(i)))
        except SolverError as exc:
            raise SolverError(f"eigen-system {i} of {tableau.name}: {exc}") from exc
    return out


def irk_step(state, tableau, plan, forcing=None):
    """Fully implicit RK step by block diagonalization of the stage system.

    Parabolic: ``(M + dt lam_i K) kt_i = sum_j Sinv_ij (-K q + f_j)``.
    Wave: ``(M + dt**2 lam_i**2 K) a_i = sigma_i p + dt lam_i gp_i`` with
    ``sigma = Sinv 1`` and ``gp = Sinv (-K q + f)``, then
    ``bt_i = gp_i - dt lam_i K a_i``. Stages are mapped back with ``S``.
    """
    lam, S, Sinv = tableau.eig
    dt, K = plan.dt, plan.backend.K
    n, s = state.q.size, tableau.stages
    fs = np.array([_f(forcing, state.t + c * dt, n) for c in tableau.c])
    if isinstance(state, ParabolicState):
        base = -(K @ state.q)
        F = base[None, :] + fs
        Ft = Sinv @ F
        taus = [dt * x for x in lam]
        kt = np.array(_transformed_solves(plan, tableau, taus, lambda i: Ft[i]))
        k = S @ kt
        q1 = state.q + dt * (tableau.b @ k)
        return ParabolicState(_realify(q1, plan), state.t + dt)
    sigma = Sinv.sum(axis=1)
    gp = Sinv @ (-(K @ state.q)[None, :] + fs)
    taus = [dt**2 * x**2 for x in lam]
    a = np.array(
        _transformed_solves(plan, tableau, taus, lambda i: sigma[i] * state.p + dt * lam[i] * gp[i])
    )
    bt = np.array([gp[i] - dt * lam[i] * (K @ a[i]) for i in range(s)])
    kq, kp = S @ a, S @ bt
    q1 = state.q + dt * (tableau.b @ kq)
    p1 = state.p + dt * (tableau.b @ kp)
    return WaveState(_realify(q1, plan), _realify(p1, plan), state.t + dt)


def step(state, plan, forcing=None):
    s = plan.scheme
    if isinstance(state, WaveState):
        if s == "midpoint":
            return midpoint_step(state, plan, forcing)
        if s not in WAVE_SCHEMES:
            raise ValueError(f"scheme {s!r} is not available for wave problems")
        return irk_step(state, TABLEAUX[s], plan, forcing)
    if s == "euler":
        return implicit_euler_step(state, plan, forcing)
    if s == "trbdf2":
        return trbdf2_step(state, plan, forcing)
    if s not in PARABOLIC_SCHEMES:
        raise ValueError(f"scheme {s!r} is not available for parabolic problems")
    tab = TABLEAUX[s]
    return dirk_step(state, tab, plan, forcing) if tab.lower_triangular else irk_step(state, tab, plan, forcing)


def energy(state, backend):
    """``E = p^T M^-1 p / 2 + q^T K q / 2``."""
    p, q = state.p, state.q
    return 0.5 * float(p @ backend.mass_solve(p)) + 0.5 * float(q @ (backend.K @ q))


def dual_mass_norm(f, backend):
    """``|f|_{M^-1} = sqrt(f^T M^-1 f)``."""
    return math.sqrt(max(float(f @ backend.mass_solve(f)), 0.0))


def energy_drift_bound(dt, forcing_norms):
    """Cumulative bound on ``|sqrt(E_n) - sqrt(E_0)|`` for a forced midpoint run.

    ``forcing_norms[k]`` is ``|f_{k+1/2}|_{M^-1}``; entry ``n`` of the result
    bounds step ``n + 1``.
    """
    return dt / math.sqrt(2) * np.cumsum(forcing_norms)


@dataclass
class WaveProblem:
    M: sp.csr_matrix
    K: sp.csr_matrix
    q0: np.ndarray
    p0: np.ndarray
    forcing: object = None

    def initial_state(self):
        return WaveState(np.array(self.q0, dtype=float), np.array(self.p0, dtype=float), 0.0)


@dataclass
class ParabolicProblem:
    M: sp.csr_matrix
    K: sp.csr_matrix
    q0: np.ndarray
    forcing: object = None

    def initial_state(self):
        return ParabolicState(np.array(self.q0, dtype=float), 0.0)


def source_forcing(grid, g):
    """``t -> (int phi_i g(., t))_i``."""
    return lambda t: load_vector(grid, g, t)


def nodal_interpolant(grid, u):
    x = grid.nodes
    return np.asarray(np.broadcast_to(u(x[:, 0], x[:, 1]), (grid.size,)), dtype=float)


def wave_benchmark(asm):
    """Wave problem with ``g = sin(2 pi (t + x1)) cos(2 pi (t + x2))``, ``u0 = 0``, ``v0 = sin(2 pi x1) cos(2 pi x2)``."""
    grid = asm.grid
    p0 = load_vector(grid, lambda x, y, t: np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y), weight=asm.coeff.mu)
    g = lambda x, y, t: np.sin(2 * np.pi * (t + x)) * np.cos(2 * np.pi * (t + y))
    return WaveProblem(asm.M, asm.K, np.zeros(grid.size), p0, source_forcing(grid, g))


def heat_benchmark(asm):
    """Parabolic problem with the same source and ``u0 = sin(2 pi x1) cos(2 pi x2)``."""
    grid = asm.grid
    u0 = nodal_interpolant(grid, lambda x, y: np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y))
    g = lambda x, y, t: np.sin(2 * np.pi * (t + x)) * np.cos(2 * np.pi * (t + y))
    return ParabolicProblem(asm.M, asm.K, u0, source_forcing(grid, g))


@dataclass
class Trajectory:
    times: list
    states: list
    energies: list = field(default_factory=list)
    forcing_norms: list = field(default_factory=list)
    probes: list = field(default_factory=list)

    @property
    def final(self):
        return self.states[-1]

    def to_csv(self, path):
        """Rows ``t, energy, probe_1..probe_L`` (energy blank for parabolic runs)."""
        path = Path(path)
        n_probe = len(self.probes[0]) if self.probes else 0
        with path.open("w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["t", "energy"] + [f"probe_level_{k + 1}" for k in range(n_probe)])
            for i, t in enumerate(self.times):
                e = repr(self.energies[i]) if self.energies else ""
                probe = [repr(float(np.real(v))) for v in self.probes[i]] if self.probes else []
                out.writerow([repr(float(t)), e] + probe)
        return path


def subband_probe(gh, q):
    """First coarse coefficient followed by the first coefficient of every subband."""
    sol = subband_components(gh, q, gh.solve_tol)
    return [sol.coarse[0]] + [sol.subbands[k][0] for k in range(2, gh.r + 1)]


def run(problem, plan, keep="all", probe_hierarchy=None, max_threads=1):
    """Step ``problem`` from 0 to ``plan.T``.

    ``keep="all"`` stores every state, ``"final"`` only the last one. With
    ``probe_hierarchy`` the first coarse coefficient and the first coefficient
    of every subband are recorded at each step.
    """
    wave = isinstance(problem, WaveProblem)
    taus = plan.wave_taus() if wave else plan.parabolic_taus()
    plan.backend.prepare(taus, max_threads=max_threads)
    state = problem.initial_state()
    traj = Trajectory([state.t], [state])

    def record(st):
        if wave:
            traj.energies.append(energy(st, plan.backend))
        if probe_hierarchy is not None:
            traj.probes.append(subband_probe(probe_hierarchy, st.q))

    record(state)
    for _ in range(plan.n_steps):
        if wave and problem.forcing is not None:
            traj.forcing_norms.append(dual_mass_norm(problem.forcing(state.t + plan.dt / 2), plan.backend))
        state = step(state, plan, problem.forcing)
        if keep == "all":
            traj.states.append(state)
        else:
            traj.states[-1:] = [state]
        traj.times.append(state.t)
        record(state)
    return traj


def refinement_level(dt, eps):
    """Smallest ``s`` with ``dt / 2**s <= eps``."""
    if not 0 < eps < dt:
        raise ValueError("need 0 < eps < dt")
    s = 1
    while dt / 2**s > eps:
        s += 1
    return s


def tail_schedule(dt, s):
    """Step lengths ``dt/2, dt/4, ..., dt/2**s, dt/2**s``; they sum to ``dt`` exactly."""
    return [dt / 2**j for j in range(1, s + 1)] + [dt / 2**s]


@dataclass
class MultiStepResult:
    state: object
    s: int
    schedule: list
    n_steps: int
    n_coarse_steps: int


def multi_timestep_run(problem, plan, eps, max_threads=1):
    """Coarse steps up to ``T - dt``, then the last interval with geometrically refined steps."""
    s = refinement_level(plan.dt, eps)
    n = plan.n_steps
    tail = tail_schedule(plan.dt, s)
    wave = isinstance(problem, WaveProblem)
    plans = {h: plan.with_dt(h) for h in dict.fromkeys([plan.dt] + tail)}
    taus = []
    for p in plans.values():
        taus.extend(p.wave_taus() if wave else p.parabolic_taus())
    plan.backend.prepare(taus, max_threads=max_threads)
    state = problem.initial_state()
    for _ in range(n - 1):
        state = step(state, plan, problem.forcing)
    t0 = state.t
    elapsed = 0.0
    for h in tail:
        state = step(state, plans[h], problem.forcing)
        elapsed += h
        state.t = t0 + elapsed
    return MultiStepResult(state, s, [plan.dt] * (n - 1) + tail, n - 1 + len(tail), n - 1)
