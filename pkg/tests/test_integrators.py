import math

import numpy as np
import pytest
import scipy.sparse as sp

from gamblets import TAU_INF, exact_transform
from gamblets.integrators import (
    GAMMA,
    PARABOLIC_SCHEMES,
    SDIRK3_LAMBDA,
    TABLEAUX,
    DirectBackend,
    GambletBackend,
    IntegratorPlan,
    ParabolicProblem,
    ParabolicState,
    WaveProblem,
    WaveState,
    dual_mass_norm,
    energy,
    energy_drift_bound,
    heat_benchmark,
    multi_timestep_run,
    refinement_level,
    run,
    step,
    tail_schedule,
    wave_benchmark,
)
from oracles import midpoint_matrix, radau_iia_coefficients


def scalar(m=1.0, k=1.0):
    return sp.csr_matrix([[m]]), sp.csr_matrix([[k]])


def scalar_plan(scheme, dt, T=1.0, k=1.0):
    return IntegratorPlan(scheme, dt, T, DirectBackend(*scalar(k=k)))


@pytest.mark.parametrize("name", sorted(TABLEAUX))
def test_weights_sum_to_one(name):
    assert TABLEAUX[name].b.sum() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("name", ["euler", "midpoint", "sdirk3", "gl2", "radau2a", "lobatto3c"])
def test_row_sums_equal_nodes(name):
    tab = TABLEAUX[name]
    np.testing.assert_allclose(tab.A.sum(axis=1), tab.c, atol=1e-14)


def test_dirk3_row_sums():
    tab = TABLEAUX["dirk3"]
    rows = tab.A.sum(axis=1)
    np.testing.assert_allclose(rows[:2], tab.c[:2], atol=1e-12)
    # the third row of the tabulated coefficients misses its node by about 7e-11
    assert abs(rows[2] - tab.c[2]) < 1e-9


def test_sdirk3_diagonal_is_cubic_root():
    x = SDIRK3_LAMBDA
    assert abs(1 / 6 - 1.5 * x + 3 * x**2 - x**3) < 1e-9


def test_trbdf2_gamma_identity():
    assert GAMMA / 2 == pytest.approx((1 - GAMMA) / (2 - GAMMA), rel=1e-14)


def test_gl2_eigenvalues():
    lam, S, Sinv = TABLEAUX["gl2"].eig
    lam = sorted((complex(x) for x in lam), key=lambda z: z.imag)
    assert lam[0] == pytest.approx(0.25 - 1j * math.sqrt(3) / 12)
    assert lam[1] == pytest.approx(0.25 + 1j * math.sqrt(3) / 12)
    np.testing.assert_allclose(S @ Sinv, np.eye(2), atol=1e-14)


def test_radau_matches_collocation():
    A, b, c = radau_iia_coefficients()
    tab = TABLEAUX["radau2a"]
    np.testing.assert_allclose(tab.A, A, atol=1e-14)
    np.testing.assert_allclose(tab.b, b, atol=1e-14)
    np.testing.assert_allclose(tab.c, c, atol=1e-14)


@pytest.mark.parametrize("name", ["gl2", "radau2a", "lobatto3c"])
def test_eigendecomposition_reconstructs(name):
    lam, S, Sinv = TABLEAUX[name].eig
    A = S @ np.diag(lam.astype(complex)) @ Sinv
    np.testing.assert_allclose(A, TABLEAUX[name].A, atol=1e-12)


def test_plan_validation():
    with pytest.raises(ValueError):
        scalar_plan("rk4", 0.1)
    with pytest.raises(ValueError):
        scalar_plan("euler", 0.0)
    with pytest.raises(ValueError):
        _ = scalar_plan("euler", 0.3, T=1.0).n_steps


def test_shift_sets():
    assert scalar_plan("midpoint", 0.2).wave_taus() == [pytest.approx(0.01)]
    assert scalar_plan("euler", 0.2).parabolic_taus() == [0.2]
    assert scalar_plan("trbdf2", 0.2).parabolic_taus() == [pytest.approx(0.1 * GAMMA)]
    assert len(scalar_plan("sdirk3", 0.2).parabolic_taus()) == 1
    assert len(scalar_plan("radau2a", 0.2).parabolic_taus()) == 3


@pytest.mark.parametrize("omega,dt", [(1.0, 0.1), (7.0, 0.3), (50.0, 0.01)])
def test_midpoint_matches_closed_form(omega, dt):
    plan = IntegratorPlan("midpoint", dt, dt, DirectBackend(*scalar(k=omega**2)))
    s1 = step(WaveState(np.array([0.3]), np.array([-0.7])), plan)
    expected = midpoint_matrix(omega, dt) @ [0.3, -0.7]
    np.testing.assert_allclose([s1.q[0], s1.p[0]], expected, rtol=1e-13)


@pytest.mark.parametrize("scheme", ["midpoint", "gl2", "radau2a", "lobatto3c"])
def test_free_particle(scheme):
    # K = 0: q grows linearly with the momentum
    plan = IntegratorPlan(scheme, 0.1, 1.0, DirectBackend(*scalar(m=2.0, k=0.0)))
    traj = run(WaveProblem(plan.backend.M, plan.backend.K, [1.0], [4.0]), plan)
    assert traj.final.q[0] == pytest.approx(1.0 + 2.0, rel=1e-12)
    assert traj.final.p[0] == pytest.approx(4.0, rel=1e-12)


def test_euler_one_step():
    plan = scalar_plan("euler", 0.25, k=3.0)
    s1 = step(ParabolicState(np.array([2.0])), plan)
    assert s1.q[0] == pytest.approx(2.0 / (1 + 0.75))


@pytest.mark.parametrize("scheme", PARABOLIC_SCHEMES)
def test_zero_stays_zero(scheme):
    plan = scalar_plan(scheme, 0.1, T=0.5)
    traj = run(ParabolicProblem(plan.backend.M, plan.backend.K, [0.0]), plan)
    assert traj.final.q[0] == 0.0


def _scalar_error(scheme, dt):
    plan = scalar_plan(scheme, dt, T=1.0)
    forcing = lambda t: np.array([math.cos(t)])
    prob = ParabolicProblem(plan.backend.M, plan.backend.K, [1.0], forcing)
    exact = 0.5 * (math.cos(1) + math.sin(1)) + 0.5 * math.exp(-1)
    return abs(run(prob, plan, keep="final").final.q[0] - exact)


@pytest.mark.parametrize("scheme,order", [("euler", 1), ("trbdf2", 2), ("sdirk3", 3), ("gl2", 4)])
def test_forced_scalar_orders(scheme, order):
    e1, e2 = _scalar_error(scheme, 0.1), _scalar_error(scheme, 0.05)
    assert math.log2(e1 / e2) == pytest.approx(order, abs=0.3)


def test_energy_of_simple_states():
    backend = DirectBackend(sp.identity(3, format="csr"), sp.identity(3, format="csr"))
    assert energy(WaveState(np.zeros(3), np.zeros(3)), backend) == 0.0
    assert energy(WaveState(np.eye(3)[0], np.zeros(3)), backend) == pytest.approx(0.5)
    assert dual_mass_norm(np.array([3.0, 4.0, 0.0]), backend) == pytest.approx(5.0)
    np.testing.assert_allclose(energy_drift_bound(0.2, [1.0, 2.0]), [0.2 / math.sqrt(2), 0.6 / math.sqrt(2)])


@pytest.fixture(scope="module")
def r3(setups):
    _, cells, asm = setups(3, "multiscale")
    return cells, asm


@pytest.mark.parametrize("scheme", ["midpoint", "gl2"])
def test_unforced_energy_conserved(r3, scheme):
    cells, asm = r3
    prob = wave_benchmark(asm)
    prob.forcing = None
    plan = IntegratorPlan(scheme, 0.05, 5.0, GambletBackend(asm, cells))
    e = np.array(run(prob, plan, keep="final").energies)
    assert np.abs(e / e[0] - 1).max() < 1e-9


def test_forced_energy_bound(r3):
    cells, asm = r3
    plan = IntegratorPlan("midpoint", 0.02, 1.0, DirectBackend(asm.M, asm.K))
    traj = run(wave_benchmark(asm), plan, keep="final")
    drift = np.abs(np.sqrt(traj.energies[1:]) - math.sqrt(traj.energies[0]))
    bound = energy_drift_bound(plan.dt, traj.forcing_norms)
    assert np.all(drift <= bound * (1 + 1e-10) + 1e-14)


@pytest.mark.parametrize("scheme", ["midpoint", "gl2", "radau2a"])
def test_gamblet_backend_matches_direct_wave(r3, scheme):
    cells, asm = r3
    prob = wave_benchmark(asm)
    a = run(prob, IntegratorPlan(scheme, 0.05, 0.5, GambletBackend(asm, cells)), keep="final").final
    b = run(prob, IntegratorPlan(scheme, 0.05, 0.5, DirectBackend(asm.M, asm.K)), keep="final").final
    np.testing.assert_allclose(a.q, b.q, atol=1e-9 * np.abs(b.q).max())
    np.testing.assert_allclose(a.p, b.p, atol=1e-9 * np.abs(b.p).max())


@pytest.mark.parametrize("scheme", ["euler", "trbdf2", "dirk3", "radau2a", "gl2"])
def test_gamblet_backend_matches_direct_heat(r3, scheme):
    cells, asm = r3
    prob = heat_benchmark(asm)
    plan_g = IntegratorPlan(scheme, 0.05, 0.5, GambletBackend(asm, cells))
    a = run(prob, plan_g, keep="final").final
    b = run(prob, IntegratorPlan(scheme, 0.05, 0.5, DirectBackend(asm.M, asm.K)), keep="final").final
    np.testing.assert_allclose(a.q, b.q, atol=1e-9 * np.abs(b.q).max())
    assert plan_g.stats["max_imag_residue"] < 1e-9


def test_block_diagonalized_stage_solve_matches_coupled_system(setups):
    # one GL2 step against the full 2-stage Kronecker system
    _, cells, asm = setups(2, "multiscale")
    M, K = asm.M.toarray(), asm.K.toarray()
    tab = TABLEAUX["gl2"]
    dt, n = 0.1, M.shape[0]
    q0 = np.random.default_rng(0).standard_normal(n)
    big = np.kron(np.eye(2), M) + dt * np.kron(tab.A, K)
    rhs = np.concatenate([-K @ q0, -K @ q0])
    k = np.linalg.solve(big, rhs).reshape(2, n)
    expected = q0 + dt * (tab.b @ k)
    plan = IntegratorPlan("gl2", dt, dt, GambletBackend(asm, cells))
    got = step(ParabolicState(q0), plan).q
    np.testing.assert_allclose(got, expected, atol=1e-11)


def test_solver_cache_shared_across_steps(r3):
    cells, asm = r3
    backend = DirectBackend(asm.M, asm.K)
    run(heat_benchmark(asm), IntegratorPlan("radau2a", 0.1, 1.0, backend), keep="final")
    assert len(backend.taus) == 3
    assert backend.n_solves == 30


def test_probes_and_csv(r3, tmp_path):
    cells, asm = r3
    gh = exact_transform(asm, cells, TAU_INF)
    plan = IntegratorPlan("midpoint", 0.1, 0.3, DirectBackend(asm.M, asm.K))
    traj = run(wave_benchmark(asm), plan, probe_hierarchy=gh)
    assert len(traj.states) == 4 and len(traj.probes[0]) == 3
    lines = traj.to_csv(tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,energy,probe_level_1,probe_level_2,probe_level_3"
    assert len(lines) == 5


def test_refinement_level_and_schedule():
    assert refinement_level(0.1, 1 / 1280) == 7
    assert refinement_level(1.0, 0.5) == 1
    with pytest.raises(ValueError):
        refinement_level(0.1, 0.2)
    sched = tail_schedule(0.1, 7)
    assert len(sched) == 8
    assert math.fsum(sched) == 0.1


def test_multistep_run_shape(r3):
    cells, asm = r3
    plan = IntegratorPlan("euler", 0.1, 1.0, DirectBackend(asm.M, asm.K))
    res = multi_timestep_run(heat_benchmark(asm), plan, 1 / 1280)
    assert res.s == 7
    assert res.n_coarse_steps == 9
    assert res.n_steps == 17
    assert res.state.t == pytest.approx(1.0, abs=1e-14)
    assert math.fsum(res.schedule) == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("scheme", ["euler", "dirk3", "radau2a", "lobatto3c"])
def test_contractive_on_pairs(r3, scheme):
    cells, asm = r3
    rng = np.random.default_rng(7)
    base = heat_benchmark(asm)
    plan = IntegratorPlan(scheme, 0.05, 0.5, DirectBackend(asm.M, asm.K))
    a = run(ParabolicProblem(asm.M, asm.K, rng.standard_normal(64), base.forcing), plan).states
    b = run(ParabolicProblem(asm.M, asm.K, rng.standard_normal(64), base.forcing), plan).states
    d = [math.sqrt((x.q - y.q) @ (asm.M @ (x.q - y.q))) for x, y in zip(a, b)]
    assert all(d1 <= d0 * (1 + 1e-12) for d0, d1 in zip(d, d[1:]))
