import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from gamblets import TAU_INF, exact_transform, localized_transform
from gamblets.discretization import tau_operator
from gamblets.hierarchy import IndexTree
from gamblets.linalg import SolverError, to_dense
from gamblets.transform import (
    LocalizedBlockSystem,
    decay_profile,
    gamblet_transform,
    load_hierarchy,
    localized_block_solve,
    save_hierarchy,
    theoretical_radii,
)
from oracles import gamblet_coefficients

TAUS = [0.0025, TAU_INF, 0.01 + 0.02j]


def dense(m):
    return np.asarray(to_dense(m))


def test_depth_one_is_degenerate():
    tree = IndexTree(1)
    a = np.diag([2.0, 3.0, 4.0, 5.0])
    gh = gamblet_transform(a, tree)
    assert gh.B == {} and gh.R == {}
    np.testing.assert_array_equal(gh.A[1], a)
    np.testing.assert_array_equal(dense(gh.psi(1)), np.eye(4))


def test_shape_mismatch():
    with pytest.raises(ValueError):
        gamblet_transform(np.eye(5), IndexTree(1))


def test_frozen_coarse_operator_laplacian(setups):
    _, cells, asm = setups(2, "laplacian")
    a1 = dense(exact_transform(asm, cells, TAU_INF).A[1])
    # frozen from the independent oracle
    assert a1[0, 0] == pytest.approx(1.5818091600500321, rel=1e-12)
    assert a1[0, 1] == pytest.approx(-0.35882461142279043, rel=1e-12)
    assert a1[0, 3] == pytest.approx(-0.09062304153015134, rel=1e-12)
    assert np.trace(a1) == pytest.approx(6.3272366402001285, rel=1e-12)


@pytest.mark.parametrize("kind", ["multiscale", "laplacian"])
@pytest.mark.parametrize("tau", TAUS)
def test_exact_matches_energy_minimizer_oracle(setups, kind, tau):
    r = 3
    _, cells, asm = setups(r, kind)
    gh = exact_transform(asm, cells, tau)
    full = dense(tau_operator(asm, tau))
    for k in range(1, r):
        psi, ak = gamblet_coefficients(full, r, k)
        np.testing.assert_allclose(dense(gh.psi(k)), psi, atol=1e-10)
        np.testing.assert_allclose(dense(gh.A[k]), ak, rtol=1e-9, atol=1e-9 * abs(ak).max())


@pytest.mark.parametrize("nl", [None, 1])
@pytest.mark.parametrize("tau", TAUS)
def test_restriction_is_right_inverse_of_aggregation(setups, nl, tau):
    _, cells, asm = setups(3, "multiscale")
    gh = exact_transform(asm, cells, tau) if nl is None else localized_transform(asm, cells, tau, nl)
    for k in range(2, 4):
        prod = dense(gh.pi[k]) @ dense(gh.R[k]).T
        np.testing.assert_allclose(prod, np.eye(prod.shape[0]), atol=1e-12)


@pytest.mark.parametrize("kind", ["multiscale", "laplacian"])
@pytest.mark.parametrize("tau", TAUS)
def test_levels_are_energy_orthogonal(setups, kind, tau):
    r = 3
    _, cells, asm = setups(r, kind)
    gh = exact_transform(asm, cells, tau)
    a = dense(gh.A_phi)
    blocks = [dense(gh.psi(1))] + [dense(gh.chi(k)) for k in range(2, r + 1)]
    scale = abs(a).max()
    for i in range(len(blocks)):
        for j in range(i + 1, len(blocks)):
            # plain transpose: the complex operator is symmetric, not Hermitian
            cross = blocks[i] @ a @ blocks[j].T
            assert abs(cross).max() <= 1e-10 * scale


@pytest.mark.parametrize("r", [2, 3])
def test_basis_is_nonsingular(setups, r):
    _, cells, asm = setups(r, "multiscale")
    basis = exact_transform(asm, cells, TAU_INF).basis()
    assert basis.shape == (4**r, 4**r)
    assert np.linalg.matrix_rank(basis) == 4**r


def test_subband_operators_are_projections(setups):
    _, cells, asm = setups(3, "multiscale")
    gh = exact_transform(asm, cells, 0.0025)
    a = dense(gh.A_phi)
    for k in range(2, 4):
        chi = dense(gh.chi(k))
        np.testing.assert_allclose(chi @ a @ chi.T, dense(gh.B[k]), rtol=1e-9, atol=1e-12)


@given(st.floats(0.1, 100.0))
def test_exact_transform_scales_linearly(c):
    tree = IndexTree(2)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((16, 16))
    a = x @ x.T + 16 * np.eye(16)
    g1 = gamblet_transform(a, tree)
    g2 = gamblet_transform(c * a, tree)
    np.testing.assert_allclose(dense(g2.A[1]), c * dense(g1.A[1]), rtol=1e-9)
    np.testing.assert_allclose(dense(g2.psi(1)), dense(g1.psi(1)), atol=1e-10)


def test_large_radius_reproduces_exact(setups):
    _, cells, asm = setups(3, "multiscale")
    ex = exact_transform(asm, cells, TAU_INF)
    loc = localized_transform(asm, cells, TAU_INF, 10)
    for k in range(1, 3):
        np.testing.assert_allclose(dense(loc.psi(k)), dense(ex.psi(k)), atol=1e-10)
        np.testing.assert_allclose(dense(loc.A[k]), dense(ex.A[k]), rtol=1e-9, atol=1e-10)


def test_localized_D_is_supported_on_neighbourhood(setups):
    from gamblets.hierarchy import cell_neighborhood

    _, cells, asm = setups(4, "multiscale")
    gh = localized_transform(asm, cells, TAU_INF, 1)
    d = sp.csc_matrix(gh.D[4])
    for i in (0, 5, 27, 63):
        allowed = set((3 * cell_neighborhood(3, i, 1)[:, None] + np.arange(3)).ravel().tolist())
        rows = set(d.indices[d.indptr[i] : d.indptr[i + 1]].tolist())
        assert rows <= allowed


def test_localization_error_decreases_with_radius(setups):
    _, cells, asm = setups(4, "multiscale")
    ex = dense(exact_transform(asm, cells, TAU_INF).psi(1))
    errs = [abs(dense(localized_transform(asm, cells, TAU_INF, nl).psi(1)) - ex).max() for nl in range(1, 6)]
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_radius_validation(setups):
    _, cells, asm = setups(3, "multiscale")
    with pytest.raises(ValueError):
        localized_transform(asm, cells, TAU_INF, {1: 1})
    with pytest.raises(ValueError):
        localized_transform(asm, cells, TAU_INF, -1)


def test_theoretical_radii_grow_with_level_and_accuracy():
    lo = theoretical_radii(5, 1e-4)
    hi = theoretical_radii(5, 1e-8)
    assert sorted(lo) == [1, 2, 3, 4]
    assert all(lo[k] < lo[k + 1] for k in range(1, 4))
    assert all(hi[k] > lo[k] for k in lo)


def test_single_block_solve():
    system = LocalizedBlockSystem(2, 0, np.array([7]), np.array([[4.0]]), np.array([2.0]))
    idx, y = localized_block_solve(system)
    assert idx.tolist() == [7]
    assert y[0] == pytest.approx(0.5)


def test_block_solve_failure_names_location():
    system = LocalizedBlockSystem(3, 11, np.array([0, 1]), np.array([[1.0, 2.0], [2.0, 1.0]]), np.ones(2))
    with pytest.raises(SolverError, match="level 3, coarse index 11"):
        localized_block_solve(system)
    with pytest.raises(ValueError):
        localized_block_solve(LocalizedBlockSystem(2, 0, np.array([], int), np.zeros((0, 0)), np.zeros(0)))


def test_decay_profile_shape(setups):
    _, cells, asm = setups(4, "multiscale")
    gh = exact_transform(asm, cells, TAU_INF)
    prof = decay_profile(gh, 2, 5)
    fracs = [f for _, f in prof]
    assert fracs[0] < 1
    assert all(b <= a for a, b in zip(fracs, fracs[1:]))
    assert fracs[-1] == 0.0


@pytest.mark.parametrize("nl", [None, 1])
@pytest.mark.parametrize("tau", [TAU_INF, 0.05 + 0.1j])
def test_save_load_round_trip(setups, tmp_path, nl, tau):
    _, cells, asm = setups(3, "multiscale")
    gh = exact_transform(asm, cells, tau) if nl is None else localized_transform(asm, cells, tau, nl)
    back = load_hierarchy(save_hierarchy(gh, tmp_path))
    assert back.tau == gh.tau and back.radii == gh.radii and back.field == gh.field
    for k in range(1, 4):
        np.testing.assert_allclose(dense(back.A[k]), dense(gh.A[k]), rtol=1e-14)
        np.testing.assert_allclose(dense(back.psi(k)), dense(gh.psi(k)), rtol=1e-12, atol=1e-15)
    for k in range(2, 4):
        np.testing.assert_array_equal(dense(back.W[k]), dense(gh.W[k]))
