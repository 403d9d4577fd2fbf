"""Command-line experiment runner.

Every subcommand takes an optional INI config (section ``[experiment]``) and
the overrides ``--r --nl --dt --scheme --out``. Outputs are CSV files plus a
``summary.json`` in the output directory.

Exit status: 0 on success, 2 for configuration errors, 3 for numerical
failures.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field, fields
from fractions import Fraction
from pathlib import Path

import numpy as np

from .diagnostics import (
    condition_report,
    condition_rows,
    error_norms,
    linear_fit,
    loglog_slope,
    observed_orders,
    subband_eigen_ranges,
    write_figure_csv,
)
from .discretization import (
    TAU_INF,
    CoefficientField,
    FemGrid,
    assemble,
    laplacian_coefficient,
    load_vector,
    multiscale_coefficient,
    save_coefficient,
)
from .hierarchy import MAX_DEPTH, build_hierarchy
from .integrators import (
    PARABOLIC_SCHEMES,
    TABLEAUX,
    WAVE_SCHEMES,
    DirectBackend,
    GambletBackend,
    IntegratorPlan,
    Trajectory,
    heat_benchmark,
    multi_timestep_run,
    run,
    subband_probe,
    tail_schedule,
    wave_benchmark,
)
from .linalg import SolverError, extreme_eigenvalues
from .solve import solve
from .transform import decay_profile, exact_transform, localized_transform, save_hierarchy

log = logging.getLogger("gamblets")

THREADS_ENV = "GAMBLETS_MAX_THREADS"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    problem: str = "elliptic"
    coefficient: str = "multiscale"
    mu: str = ""
    r: int = 4
    scheme: str = "midpoint"
    dt: float = 0.1
    T: float = 1.0
    nl: int | None = None
    radii: tuple = ()
    eps: float = 1e-10
    tau: str = "auto"
    output: str = "out"
    seed: int = 0
    reference_scheme: str = "radau2a"
    reference_dt: float = 1 / 1280
    multistep_eps: float | None = None
    sizes: tuple = (3, 4, 5, 6)
    dts: tuple = (0.1, 0.05, 0.025, 0.0125)
    schemes: tuple = ()
    nl_values: tuple = (1, 2, 3, 4, 5)
    level: int = 2
    probes: bool = False
    repeats: int = 3

    def validate(self):
        if self.problem not in ("elliptic", "wave", "parabolic"):
            raise ConfigError(f"problem: unknown value {self.problem!r}")
        if not 1 <= self.r <= MAX_DEPTH:
            raise ConfigError(f"r: must lie in [1, {MAX_DEPTH}], got {self.r}")
        if self.coefficient not in ("multiscale", "laplacian") and not Path(self.coefficient).is_file():
            raise ConfigError(f"coefficient: no such file {self.coefficient!r}")
        if self.mu and not Path(self.mu).is_file():
            raise ConfigError(f"mu: no such file {self.mu!r}")
        if not self.dt > 0 or not self.T > 0:
            raise ConfigError("dt and T must be positive")
        n = round(self.T / self.dt)
        if abs(n * self.dt - self.T) > 1e-12 * max(1.0, self.T):
            raise ConfigError(f"dt: {self.dt} does not divide T = {self.T}")
        if self.nl is not None and self.nl < 0:
            raise ConfigError("nl: must be nonnegative")
        if any(x < 0 for x in self.radii):
            raise ConfigError("radii: must be nonnegative")
        if self.radii and len(self.radii) != self.r - 1:
            raise ConfigError(f"radii: need {self.r - 1} values (levels 1..r-1), got {len(self.radii)}")
        if not self.eps > 0:
            raise ConfigError("eps: must be positive")
        valid = WAVE_SCHEMES if self.problem == "wave" else PARABOLIC_SCHEMES
        if self.problem != "elliptic" and self.scheme not in valid:
            raise ConfigError(f"scheme: {self.scheme!r} not available for {self.problem} problems")
        for s in self.schemes:
            if s not in TABLEAUX and s != "trbdf2":
                raise ConfigError(f"schemes: unknown scheme {s!r}")
        if self.multistep_eps is not None and not 0 < self.multistep_eps < self.dt:
            raise ConfigError("multistep_eps: need 0 < multistep_eps < dt")
        parse_tau(self.tau)
        return self

    @property
    def localization(self):
        """``None`` (exact), a uniform layer count, or a per-level dict."""
        if self.radii:
            return {k + 1: v for k, v in enumerate(self.radii)}
        return self.nl


_TUPLE_INT = {"radii", "sizes", "nl_values"}
_TUPLE_FLOAT = {"dts"}
_TUPLE_STR = {"schemes"}


def _parse_number(text):
    return float(Fraction(text.strip())) if "/" in text else float(text)


def _parse_field(name, text):
    text = text.strip()
    if name in _TUPLE_INT:
        return tuple(int(x) for x in text.split(",") if x.strip())
    if name in _TUPLE_FLOAT:
        return tuple(_parse_number(x) for x in text.split(",") if x.strip())
    if name in _TUPLE_STR:
        return tuple(x.strip() for x in text.split(",") if x.strip())
    if name in ("nl", "multistep_eps"):
        if text.lower() in ("", "none", "exact"):
            return None
        return int(text) if name == "nl" else _parse_number(text)
    if name in ("r", "seed", "level", "repeats"):
        return int(text)
    if name in ("dt", "T", "eps", "reference_dt"):
        return _parse_number(text)
    if name == "probes":
        return text.lower() in ("1", "true", "yes", "on")
    return text


def _format_field(value):
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text):
    cp = configparser.ConfigParser(inline_comment_prefixes=(";",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    if not cp.has_section("experiment"):
        raise ConfigError("config needs an [experiment] section")
    known = {f.name for f in fields(ExperimentConfig)}
    values = {}
    for key, raw in cp.items("experiment"):
        if key not in known:
            raise ConfigError(f"{key}: unknown field")
        try:
            values[key] = _parse_field(key, raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from exc
    return ExperimentConfig(**values)


def serialize_config(cfg):
    lines = ["[experiment]"]
    for f in fields(cfg):
        lines.append(f"{f.name} = {_format_field(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


def load_config(path):
    if path is None:
        return ExperimentConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {path!r} not found")
    return parse_config(p.read_text())


def parse_tau(text):
    """``auto``, ``inf`` or a real/complex number (``0.16+0.18j``)."""
    t = str(text).strip().lower()
    if t == "auto":
        return None
    if t in ("inf", "infinity"):
        return TAU_INF
    try:
        v = complex(t.replace(" ", ""))
    except ValueError as exc:
        raise ConfigError(f"tau: cannot parse {text!r}") from exc
    if v == 0:
        raise ConfigError("tau: must be nonzero")
    return v.real if v.imag == 0 else v


def build_coefficient(cfg, r=None):
    r = cfg.r if r is None else r
    if cfg.coefficient == "multiscale":
        return multiscale_coefficient(r)
    if cfg.coefficient == "laplacian":
        return laplacian_coefficient(r)
    coeff = CoefficientField.load(cfg.coefficient, cfg.mu or None)
    if coeff.a.shape != (2**r + 1, 2**r + 1):
        raise ConfigError(f"coefficient: file has shape {coeff.a.shape}, r={r} needs {(2**r + 1,) * 2}")
    return coeff


def setup(cfg, r=None):
    r = cfg.r if r is None else r
    tree, cells = build_hierarchy(r)
    asm = assemble(FemGrid(r), build_coefficient(cfg, r))
    return tree, cells, asm


def hierarchy_for(cfg, asm, cells, tau, localization="config"):
    loc = cfg.localization if localization == "config" else localization
    if loc is None:
        return exact_transform(asm, cells, tau, eps=cfg.eps)
    return localized_transform(asm, cells, tau, loc, eps=cfg.eps)


class Output:
    def __init__(self, directory):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.summary = {}
        self.files = []

    def path(self, name):
        p = self.dir / name
        self.files.append(p.name)
        return p

    def write_summary(self, cfg, command):
        data = {"command": command, "config": _jsonable(dataclasses.asdict(cfg)), "files": self.files}
        data.update(self.summary)
        (self.dir / "summary.json").write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def _source(x, y, t):
    return np.sin(np.pi * x) * np.cos(np.pi * y)


def cmd_elliptic(cfg, out, threads):
    tree, cells, asm = setup(cfg)
    tau = parse_tau(cfg.tau)
    tau = TAU_INF if tau is None else tau
    t0 = time.perf_counter()
    gh = hierarchy_for(cfg, asm, cells, tau)
    t1 = time.perf_counter()
    g = load_vector(asm.grid, _source)
    sol = solve(gh, g, cfg.eps)
    t2 = time.perf_counter()
    u = sol.recombined
    A = gh.A_phi
    residual = float(np.linalg.norm(A @ u - g) / np.linalg.norm(g))
    save_hierarchy(gh, out.path("hierarchy"))
    save_coefficient(asm.coeff, out.path("coefficient"))
    sol.to_csv(out.path("subbands.csv"))
    out.summary.update(
        residual=residual,
        transform_seconds=t1 - t0,
        solve_seconds=t2 - t1,
        levels=gh.r,
        unknowns=int(A.shape[0]),
        tau=tau,
    )


def _backend(cfg, asm, cells, localization="config", direct=False):
    if direct:
        return DirectBackend(asm.M, asm.K)
    loc = cfg.localization if localization == "config" else localization
    return GambletBackend(asm, cells, nl=loc, eps=cfg.eps)


def _benchmark(cfg, asm):
    return wave_benchmark(asm) if cfg.problem == "wave" else heat_benchmark(asm)


def reference_solution(cfg, asm):
    prob = _benchmark(cfg, asm)
    plan = IntegratorPlan(cfg.reference_scheme, cfg.reference_dt, cfg.T, DirectBackend(asm.M, asm.K))
    return run(prob, plan, keep="final").final


def cmd_time(cfg, out, threads):
    tree, cells, asm = setup(cfg)
    prob = _benchmark(cfg, asm)
    backend = _backend(cfg, asm, cells)
    plan = IntegratorPlan(cfg.scheme, cfg.dt, cfg.T, backend)
    t0 = time.perf_counter()
    if cfg.multistep_eps is not None:
        res = multi_timestep_run(prob, plan, cfg.multistep_eps, max_threads=threads)
        final = res.state
        out.summary.update(
            refinement_s=res.s,
            step_schedule=res.schedule,
            steps=res.n_steps,
            coarse_steps=res.n_coarse_steps,
            schedule_sum_tail=float(sum(tail_schedule(cfg.dt, res.s))),
        )
    else:
        probe = None
        if cfg.probes:
            probe = hierarchy_for(cfg, asm, cells, plan.wave_taus()[0] if cfg.problem == "wave" else cfg.dt)
        traj = run(prob, plan, keep="final", probe_hierarchy=probe, max_threads=threads)
        traj.to_csv(out.path("trajectory.csv"))
        final = traj.final
        if traj.energies:
            e0 = traj.energies[0]
            out.summary["max_relative_energy_change"] = float(
                max(abs(e / e0 - 1) for e in traj.energies) if e0 else 0.0
            )
    t1 = time.perf_counter()
    out.summary.update(
        run_seconds=t1 - t0,
        solves=backend.n_solves,
        hierarchies=len(backend.taus),
        max_imag_residue=float(plan.stats["max_imag_residue"]),
    )
    if cfg.reference_dt > 0:
        ref = reference_solution(cfg, asm)
        rep = error_norms(final.q, ref.q, asm)
        out.summary.update(h1_error=rep.h1, l2_error=rep.l2, relative_energy_error=rep.relative_energy)
    if isinstance(backend, GambletBackend) and backend.hierarchies:
        first = next(iter(backend.hierarchies.values()))
        save_hierarchy(first, out.path("hierarchy"))


def cmd_run(cfg, out, threads):
    if cfg.problem == "elliptic":
        return cmd_elliptic(cfg, out, threads)
    return cmd_time(cfg, out, threads)


def cmd_condition_numbers(cfg, out, threads):
    tree, cells, asm = setup(cfg)
    tau = parse_tau(cfg.tau)
    gh = hierarchy_for(cfg, asm, cells, TAU_INF if tau is None else tau)
    reps = condition_report(gh)
    write_figure_csv(out.path("condition_numbers.csv"), "condition-numbers", condition_rows(reps))
    ks = [rep.level for rep in reps if rep.level >= 2]
    conds = [rep.cond for rep in reps if rep.level >= 2]
    lam_a = []
    for k in range(1, gh.r + 1):
        lo, hi = extreme_eigenvalues(gh.A[k])
        lam_a.append(hi * 4.0**-k)
    out.summary.update(
        cond=[rep.cond for rep in reps],
        cond_slope=float(np.polyfit(ks, np.log(conds), 1)[0]) if len(ks) > 1 else None,
        lambda_max_scaled=lam_a,
        lambda_max_band=float(max(lam_a) / min(lam_a)),
    )


def cmd_eigen_ranges(cfg, out, threads):
    tree, cells, asm = setup(cfg)
    gh = hierarchy_for(cfg, asm, cells, TAU_INF)
    ranges = subband_eigen_ranges(gh, asm.K, asm.M_unit)
    rows = [(k, m, v) for k, (lo, hi) in ranges.items() for m, v in (("min", lo), ("max", hi))]
    write_figure_csv(out.path("eigen_ranges.csv"), "eigen-ranges", rows)
    out.summary["ranges"] = {k: list(v) for k, v in ranges.items()}


def central_cell(k):
    n = 2**k
    return (n // 2 - 1) * n + n // 2 - 1 if n > 1 else 0


def cmd_decay(cfg, out, threads):
    tree, cells, asm = setup(cfg)
    tau = parse_tau(cfg.tau)
    gh = exact_transform(asm, cells, TAU_INF if tau is None else tau)
    k = min(cfg.level, gh.r)
    i = central_cell(k)
    prof = decay_profile(gh, k, i)
    write_figure_csv(out.path("decay.csv"), "decay", ((n, "outside_fraction", f) for n, f in prof))
    pos = [(n, f) for n, f in prof if f > 0]
    if len(pos) >= 2:
        slope, _, r2 = linear_fit([n for n, _ in pos], np.log([f for _, f in pos]))
        out.summary.update(log_slope=slope, r_squared=r2)
    out.summary.update(level=k, cell=i, profile=prof)


def _errors_at_T(cfg, asm, cells, scheme, dt, localization, ref):
    prob = _benchmark(cfg, asm)
    plan = IntegratorPlan(scheme, dt, cfg.T, _backend(cfg, asm, cells, localization))
    final = run(prob, plan, keep="final").final
    return error_norms(final.q, ref.q, asm)


def cmd_localization(cfg, out, threads):
    tree, cells, asm = setup(cfg)
    rows = []
    if cfg.problem == "elliptic":
        tau = parse_tau(cfg.tau)
        tau = TAU_INF if tau is None else tau
        g = load_vector(asm.grid, _source)
        exact = solve(exact_transform(asm, cells, tau), g, cfg.eps).recombined
        errs = []
        for nl in cfg.nl_values:
            u = solve(localized_transform(asm, cells, tau, nl, eps=cfg.eps), g, cfg.eps).recombined
            rep = error_norms(u, exact, asm)
            errs.append(rep.relative_energy)
            rows += [(nl, "h1", rep.h1), (nl, "relative_energy", rep.relative_energy)]
        out.summary["errors"] = dict(zip(cfg.nl_values, errs))
    else:
        ref = reference_solution(cfg, asm)
        schemes = cfg.schemes or (cfg.scheme,)
        for s in schemes:
            for nl in list(cfg.nl_values) + [None]:
                rep = _errors_at_T(cfg, asm, cells, s, cfg.dt, nl, ref)
                tag = "exact" if nl is None else nl
                rows += [(f"{s}:{tag}", "h1", rep.h1), (f"{s}:{tag}", "l2", rep.l2)]
                out.summary.setdefault("h1_errors", {}).setdefault(s, {})[str(tag)] = rep.h1
    write_figure_csv(out.path("localization.csv"), "localization", rows)


def _time_errors(cfg, out, name, default_schemes):
    tree, cells, asm = setup(cfg)
    ref = reference_solution(cfg, asm)
    schemes = cfg.schemes or default_schemes
    rows = []
    for s in schemes:
        errs = []
        for dt in cfg.dts:
            rep = _errors_at_T(cfg, asm, cells, s, dt, "config", ref)
            errs.append(rep.h1)
            rows += [(f"{s}:{dt!r}", "h1", rep.h1), (f"{s}:{dt!r}", "l2", rep.l2)]
        out.summary.setdefault("h1_errors", {})[s] = errs
        if len(errs) > 1:
            out.summary.setdefault("observed_orders", {})[s] = list(observed_orders(cfg.dts, errs))
    write_figure_csv(out.path(f"{name}.csv"), name, rows)


def cmd_wave_errors(cfg, out, threads):
    cfg = dataclasses.replace(cfg, problem="wave")
    _time_errors(cfg, out, "wave-errors", ("midpoint", "gl2"))


def cmd_parabolic_errors(cfg, out, threads):
    cfg = dataclasses.replace(cfg, problem="parabolic")
    _time_errors(cfg, out, "parabolic-errors", ("euler", "trbdf2", "dirk3", "sdirk3", "radau2a", "lobatto3c"))


def cmd_multistep(cfg, out, threads):
    cfg = dataclasses.replace(cfg, problem="parabolic")
    eps = cfg.multistep_eps or 1 / 1280
    tree, cells, asm = setup(cfg)
    ref = reference_solution(cfg, asm)
    prob = heat_benchmark(asm)
    rows = []
    for s in cfg.schemes or ("euler", "trbdf2", "dirk3", "sdirk3", "radau2a", "lobatto3c"):
        res = multi_timestep_run(prob, IntegratorPlan(s, cfg.dt, cfg.T, _backend(cfg, asm, cells)), eps, threads)
        fine_dt = cfg.dt / 2**res.s
        fine = run(prob, IntegratorPlan(s, fine_dt, cfg.T, _backend(cfg, asm, cells)), keep="final").final
        coarse = run(prob, IntegratorPlan(s, cfg.dt, cfg.T, _backend(cfg, asm, cells)), keep="final").final
        reps = {
            "multistep": error_norms(res.state.q, ref.q, asm),
            "uniform_fine": error_norms(fine.q, ref.q, asm),
            "uniform_coarse": error_norms(coarse.q, ref.q, asm),
        }
        for key, rep in reps.items():
            rows += [(f"{s}:{key}", "h1", rep.h1), (f"{s}:{key}", "l2", rep.l2)]
        out.summary.setdefault("h1_errors", {})[s] = {k: v.h1 for k, v in reps.items()}
        out.summary.update(refinement_s=res.s, steps=res.n_steps, step_schedule=res.schedule)
    write_figure_csv(out.path("multistep.csv"), "multistep", rows)


def cmd_complex_conditioning(cfg, out, threads):
    tree, cells, asm = setup(cfg)
    lam_radau = next(x for x in TABLEAUX["radau2a"].eig[0] if isinstance(x, complex) and x.imag > 0)
    rows = []
    for name, tau in (("radau2a", cfg.dt * lam_radau), ("sdirk3", cfg.dt * TABLEAUX["sdirk3"].A[0, 0])):
        gh = hierarchy_for(cfg, asm, cells, tau)
        reps = condition_report(gh)
        rows += [(f"{name}:{lvl}", m, v) for lvl, m, v in condition_rows(reps)]
        out.summary.setdefault("cond", {})[name] = [rep.cond for rep in reps]
    write_figure_csv(out.path("complex_conditioning.csv"), "complex-conditioning", rows)


def cmd_energy(cfg, out, threads):
    cfg = dataclasses.replace(cfg, problem="wave")
    tree, cells, asm = setup(cfg)
    prob = wave_benchmark(asm)
    prob.forcing = None
    rows = []
    for s in cfg.schemes or ("midpoint", "gl2"):
        for nl in list(cfg.nl_values) + [None]:
            traj = run(prob, IntegratorPlan(s, cfg.dt, cfg.T, _backend(cfg, asm, cells, nl)), keep="final")
            e0 = traj.energies[0]
            tag = "exact" if nl is None else nl
            rows += [(f"{s}:{tag}:{t!r}", "relative_energy_error", abs(e / e0 - 1)) for t, e in zip(traj.times, traj.energies)]
            out.summary.setdefault("max_energy_error", {}).setdefault(s, {})[str(tag)] = max(
                abs(e / e0 - 1) for e in traj.energies
            )
    write_figure_csv(out.path("energy.csv"), "energy", rows)


def cmd_subbands(cfg, out, threads):
    tree, cells, asm = setup(cfg)
    prob = _benchmark(cfg, asm)
    plan = IntegratorPlan(cfg.scheme, cfg.dt, cfg.T, _backend(cfg, asm, cells))
    tau = plan.wave_taus()[0] if cfg.problem == "wave" else plan.parabolic_taus()[0]
    probe = exact_transform(asm, cells, tau)
    traj = run(prob, plan, keep="final", probe_hierarchy=probe)
    traj.to_csv(out.path("subbands_numerical.csv"))
    refplan = IntegratorPlan(cfg.reference_scheme, cfg.reference_dt, cfg.T, DirectBackend(asm.M, asm.K))
    step = max(1, round(cfg.dt / cfg.reference_dt))
    ref = run(prob, refplan, keep="all")
    sub = ref.states[::step]
    Trajectory([s.t for s in sub], sub, probes=[subband_probe(probe, s.q) for s in sub]).to_csv(
        out.path("subbands_reference.csv")
    )


def cmd_timing(cfg, out, threads):
    rows, ns, tt, ts = [], [], [], []
    nl = 3 if cfg.nl is None else cfg.nl
    tau = parse_tau(cfg.tau)
    tau = TAU_INF if tau is None else tau
    for r in cfg.sizes:
        tree, cells, asm = setup(cfg, r)
        g = load_vector(asm.grid, _source)
        best_t = best_s = math.inf
        for _ in range(max(1, cfg.repeats)):
            t0 = time.perf_counter()
            gh = localized_transform(asm, cells, tau, nl, eps=cfg.eps)
            t1 = time.perf_counter()
            solve(gh, g, cfg.eps)
            t2 = time.perf_counter()
            best_t, best_s = min(best_t, t1 - t0), min(best_s, t2 - t1)
        n = 4**r
        ns.append(n)
        tt.append(best_t)
        ts.append(best_s)
        rows += [(n, "transform_seconds", best_t), (n, "solve_seconds", best_s)]
    write_figure_csv(out.path("timing.csv"), "timing", rows)
    out.summary.update(unknowns=ns, transform_seconds=tt, solve_seconds=ts)
    if len(ns) > 1:
        out.summary.update(transform_slope=loglog_slope(ns, tt), solve_slope=loglog_slope(ns, ts))


COMMANDS = {
    "run": cmd_run,
    "elliptic": cmd_elliptic,
    "fig-condition-numbers": cmd_condition_numbers,
    "fig-eigen-ranges": cmd_eigen_ranges,
    "fig-decay": cmd_decay,
    "fig-localization": cmd_localization,
    "fig-wave-errors": cmd_wave_errors,
    "fig-parabolic-errors": cmd_parabolic_errors,
    "fig-multistep": cmd_multistep,
    "fig-complex-conditioning": cmd_complex_conditioning,
    "fig-energy": cmd_energy,
    "fig-subbands": cmd_subbands,
    "timing-sweep": cmd_timing,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="gamblets", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", nargs="?", help="INI file with an [experiment] section")
        p.add_argument("--r", type=int)
        p.add_argument("--nl", help="layers, or 'exact'")
        p.add_argument("--dt", type=_parse_number)
        p.add_argument("--scheme")
        p.add_argument("--out")
        p.add_argument("--max-threads", type=int, help=f"thread cap (default: ${THREADS_ENV} or 1)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def apply_overrides(cfg, args):
    changes = {}
    if args.r is not None:
        changes["r"] = args.r
    if args.nl is not None:
        changes["nl"] = None if args.nl.lower() in ("exact", "none") else int(args.nl)
    if args.dt is not None:
        changes["dt"] = args.dt
    if args.scheme is not None:
        changes["scheme"] = args.scheme
    if args.out is not None:
        changes["output"] = args.out
    return dataclasses.replace(cfg, **changes)


def thread_cap(args):
    if args.max_threads is not None:
        return max(1, args.max_threads)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV}: not an integer: {env!r}") from exc
    return 1


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = apply_overrides(load_config(args.config), args).validate()
        threads = thread_cap(args)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Output(cfg.output)
    try:
        np.random.seed(cfg.seed)
        COMMANDS[args.command](cfg, out, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, np.linalg.LinAlgError, FloatingPointError, RuntimeError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    out.write_summary(cfg, args.command)
    print(json.dumps({"command": args.command, "output": str(out.dir)}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
