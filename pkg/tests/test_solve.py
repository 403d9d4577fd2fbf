import functools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gamblets import TAU_INF, FemGrid, assemble, build_hierarchy, multiscale_coefficient, exact_transform, localized_transform, solve, subband_components
from gamblets.discretization import tau_operator
from gamblets.linalg import to_dense
from gamblets.solve import level_tolerance


@functools.lru_cache(maxsize=None)
def _multiscale_hierarchy():
    tree, cells = build_hierarchy(3)
    return exact_transform(assemble(FemGrid(3), multiscale_coefficient(3)), cells, TAU_INF)


@pytest.fixture(scope="module")
def hier(setups):
    _, cells, asm = setups(3, "multiscale")
    return exact_transform(asm, cells, TAU_INF), asm


def test_level_tolerance():
    assert level_tolerance(4, 1e-8) == pytest.approx(1.25e-9)


@pytest.mark.parametrize("tau", [TAU_INF, 0.0025, 0.01 + 0.03j])
def test_matches_dense_solve(setups, tau):
    _, cells, asm = setups(3, "multiscale")
    gh = exact_transform(asm, cells, tau)
    a = np.asarray(to_dense(tau_operator(asm, tau)))
    g = np.random.default_rng(1).standard_normal(64)
    u = solve(gh, g).recombined
    ref = np.linalg.solve(a, g)
    assert np.linalg.norm(u - ref) <= 1e-10 * np.linalg.norm(ref)


def test_unit_response(hier):
    gh, _ = hier
    e = np.zeros(64)
    e[9] = 1
    u = solve(gh, np.asarray(gh.A_phi @ e)).recombined
    np.testing.assert_allclose(u, e, atol=1e-10)


def test_pure_components(hier):
    gh, _ = hier
    coarse = np.asarray(to_dense(gh.psi(1)))[2]
    sol = subband_components(gh, coarse)
    np.testing.assert_allclose(sol.coarse, np.eye(4)[2], atol=1e-10)
    for w in sol.subbands.values():
        assert abs(w).max() < 1e-10
    chi = np.asarray(to_dense(gh.chi(2)))[0]
    sol = subband_components(gh, chi)
    np.testing.assert_allclose(sol.subbands[2], np.eye(12)[0], atol=1e-10)
    assert abs(sol.coarse).max() < 1e-10


def test_components_sum_to_solution(hier):
    gh, _ = hier
    g = np.random.default_rng(2).standard_normal(64)
    sol = solve(gh, g)
    total = sum(sol.component(k) for k in range(1, 4))
    np.testing.assert_allclose(total, sol.recombined, atol=1e-12)


@given(arrays(np.float64, 64, elements=st.floats(-10, 10)), arrays(np.float64, 64, elements=st.floats(-10, 10)),
       st.floats(-5, 5))
def test_linearity(g1, g2, c):
    gh = _multiscale_hierarchy()
    u = solve(gh, g1 + c * g2).recombined
    v = solve(gh, g1).recombined + c * solve(gh, g2).recombined
    assert np.linalg.norm(u - v) <= 1e-9 * (1 + np.linalg.norm(v))


@given(st.permutations([1, 2, 3]))
def test_order_does_not_matter(order):
    gh = _multiscale_hierarchy()
    g = np.arange(64, dtype=float)
    a = solve(gh, g).recombined
    b = solve(gh, g, order=order).recombined
    assert np.abs(a - b).max() <= 1e-13 * np.abs(a).max()


def test_bad_inputs(hier):
    gh, _ = hier
    with pytest.raises(ValueError):
        solve(gh, np.ones(10))
    with pytest.raises(ValueError):
        solve(gh, np.ones(64), order=[1, 1, 2])


def test_localized_residual_within_localization_error(setups):
    _, cells, asm = setups(4, "multiscale")
    ex = exact_transform(asm, cells, TAU_INF)
    g = np.random.default_rng(3).standard_normal(256)
    ref = solve(ex, g).recombined
    errs = [np.linalg.norm(solve(localized_transform(asm, cells, TAU_INF, nl), g).recombined - ref) for nl in (1, 3, 5)]
    assert errs[0] > errs[1] > errs[2]


def test_csv_export(hier, tmp_path):
    gh, _ = hier
    sol = solve(gh, np.ones(64))
    lines = sol.to_csv(tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "level,label,coefficient_re,coefficient_im"
    assert len(lines) == 1 + 64
    assert lines[1].startswith("1,0,")
    assert lines[5].startswith("2,0:0,")
