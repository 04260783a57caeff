import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixedspike.dirichlet import DomainSpec, make_mask, solve_dirichlet
from mixedspike.energy import energy_I_eps
from mixedspike.errors import ContractionFailureError, GeometryError, MixedSpikeError
from mixedspike.reduction import (
    BorderedSystem,
    ReductionCache,
    assemble_and_verify,
    contract_psi,
    eps_slope,
    nonlinear_error_E,
    physical_field,
    reduce_at,
    reduced_J,
    solve_projected,
)
from mixedspike.spectral_core import GridSpec, ScalarField, integrate, multiply_array
from mixedspike.whole_space import translate


@pytest.fixture(scope="module")
def small_mask(params, small_grid):
    return make_mask(DomainSpec.ball(1.0), params.with_eps(0.5), small_grid)


@pytest.fixture(scope="module")
def mask02(params, grid256):
    return make_mask(DomainSpec.ball(1.0), params.with_eps(0.2), grid256)


@pytest.fixture(scope="module")
def cache():
    return ReductionCache()


@pytest.fixture(scope="module")
def centre02(mask02, gs256, cache):
    return reduce_at(mask02, gs256, mask02.center, cache=cache)


def _random_field(grid, seed):
    return ScalarField(grid, np.random.default_rng(seed).standard_normal(grid.shape))


# --- projected linear problem ---------------------------------------------------


def test_zero_forcing(small_mask, gs_small):
    ps = solve_projected(ScalarField.zeros(small_mask.grid), small_mask, gs_small, [0.3, -0.2])
    assert ps.psi.max_abs() == 0.0
    assert np.all(ps.c == 0.0)


def test_bordered_solve_matches_dense_oracle(small_mask, gs_small, params):
    xi = [0.3, -0.2]
    bs = BorderedSystem(small_mask, gs_small, xi)
    grid = small_mask.grid
    g = _random_field(grid, 0)
    ps = bs.solve(g, 1e-12)
    # dense saddle matrix assembled column by column on the interior cells
    inner = np.flatnonzero(small_mask.inside.ravel())
    cols = []
    for i in inner:
        e = np.zeros(grid.points_per_axis**2)
        e[i] = 1.0
        cols.append(multiply_array(e.reshape(grid.shape), grid, params.symbol()).ravel()[inner])
    A = np.array(cols).T - np.diag(bs.potential.ravel()[inner])
    B = bs.B[inner]
    saddle = np.block([[A, -B], [-B.T, np.zeros((2, 2))]])
    sol = np.linalg.solve(saddle, np.concatenate([g.values.ravel()[inner], [0.0, 0.0]]))
    np.testing.assert_allclose(ps.psi.values.ravel()[inner], sol[:-2], atol=1e-10)
    np.testing.assert_allclose(ps.c, sol[-2:], atol=1e-10)
    assert np.all(ps.psi.values[~small_mask.inside] == 0.0)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_orthogonality_and_multiplier_identity(mask02, gs256, seed):
    xi = mask02.center + np.array([0.7, -0.4])
    bs = BorderedSystem(mask02, gs256, xi)
    g = mask02.restrict(_random_field(mask02.grid, seed) * translate(gs256.w, xi))
    ps = bs.solve(g, 1e-10)
    psi_l2 = np.sqrt(integrate(ps.psi * ps.psi))
    for z in bs.modes:
        assert abs(float(np.sum(ps.psi.values * z)) * bs.dv) <= 1e-8 * bs.alpha * psi_l2
    # c_j α = ∫(Lψ - g) Z_j up to the Gram defect of the interior-restricted modes
    gram = bs.B.T @ bs.B * bs.dv / bs.alpha
    np.testing.assert_allclose(gram @ ps.c, bs.multiplier_identity(ps, g), rtol=1e-7, atol=1e-9 * np.abs(ps.c).max())


def test_projected_solve_requires_interior_point(mask02, gs256):
    with pytest.raises(GeometryError):
        BorderedSystem(mask02, gs256, [16.0, 0.0])


# --- nonlinear error -------------------------------------------------------------


def test_nonlinear_error_literal_formula(mask02, gs256, params):
    w_xi = translate(gs256.w, mask02.center)
    ubar = solve_dirichlet(w_xi.positive_power(params.p), mask02).solution
    v = w_xi - ubar
    # at ψ = v: (ū + v)^p = w^p, so E = -p w^{p-1} v
    E = nonlinear_error_E(v, ubar, w_xi, params.p)
    np.testing.assert_allclose(E.values, -params.p * w_xi.values ** (params.p - 1) * v.values, atol=1e-12)
    E0 = nonlinear_error_E(ScalarField.zeros(mask02.grid), ubar, w_xi, params.p, mask02)
    assert np.all(E0.values[mask02.inside] <= 0)
    assert np.all(E0.values[~mask02.inside] == 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-4, 0.1))
def test_nonlinear_error_is_quadratic_for_p2(seed, amp):
    # p = 2 and ū + ψ >= 0: E(ψ1) - E(ψ2) = (ψ1 - ψ2)(ψ1 + ψ2 - 2v)
    g = GridSpec(2, 4.0, 16)
    rng = np.random.default_rng(seed)
    w = ScalarField(g, 1.0 + rng.random(g.shape))
    ubar = w * 0.9
    v = w - ubar
    a = ScalarField(g, amp * rng.standard_normal(g.shape))
    b = ScalarField(g, amp * rng.standard_normal(g.shape))
    lhs = nonlinear_error_E(a, ubar, w, 2.0) - nonlinear_error_E(b, ubar, w, 2.0)
    rhs = (a - b) * (a + b - v * 2.0)
    np.testing.assert_allclose(lhs.values, rhs.values, atol=1e-13)


# --- contraction ---------------------------------------------------------------------


def test_contraction_at_centre(centre02, gs256, params):
    r = centre02
    assert r.ratios and all(x < 1 for x in r.ratios[1:])
    assert max(r.orthogonality_defects) <= 1e-8
    assert r.max_abs_c <= 1e-6 * gs256.alpha  # the centre is critical by symmetry
    assert r.pde_residual <= 1e-8
    assert r.J_eps == pytest.approx(energy_I_eps(r.u_eps_rescaled, r.mask, params.with_eps(0.2)))
    assert r.J_eps > gs256.energy
    assert np.all(r.u_eps_rescaled.values[~r.mask.inside] == 0.0)
    assert set(r.as_dict()) >= {"xi", "c", "psi_norm_weighted", "J_eps", "contraction_ratios"}


def test_J_close_to_approximate_energy(centre02, mask02, params):
    p02 = params.with_eps(0.2)
    approx = energy_I_eps(centre02.ubar, mask02, p02)
    # J - I_ε(ū) is second order in Ψ
    assert abs(centre02.J_eps - approx) <= 10 * centre02.psi_norm_weighted**2 + 1e-12


def test_J_respects_symmetry(mask02, gs256, cache):
    c = mask02.center
    a = 0.75
    values = [reduced_J(mask02, gs256, c + off, cache=cache)
              for off in ([a, 0.0], [-a, 0.0], [0.0, a], [0.0, -a])]
    assert max(values) - min(values) <= 0.01 * abs(values[0] - reduced_J(mask02, gs256, c, cache=cache)) + 1e-9


def test_J_prefers_the_long_axis_of_an_ellipse(params, grid256, gs256):
    mask = make_mask(DomainSpec.ellipse((1.0, 0.6)), params.with_eps(0.2), grid256)
    j0 = reduced_J(mask, gs256, [0.0, 0.0])
    j_long = reduced_J(mask, gs256, [1.0, 0.0])
    j_short = reduced_J(mask, gs256, [0.0, 1.0])
    assert j0 < j_long < j_short


def test_strict_monotone_aborts_on_oscillation(params, grid256, gs256):
    mask = make_mask(DomainSpec.ball(1.0), params.with_eps(0.4), grid256)
    res = contract_psi(mask, gs256, mask.center)
    assert res.monotone_violations
    with pytest.raises(ContractionFailureError):
        contract_psi(mask, gs256, mask.center, strict_monotone=True)


def test_large_eps_fails_cleanly(params, grid256, gs256):
    mask = make_mask(DomainSpec.ball(1.0), params.with_eps(1.0), grid256)
    try:
        res = contract_psi(mask, gs256, mask.center)
    except MixedSpikeError:
        return
    assert np.isfinite(res.J_eps)


def test_contraction_needs_distance(mask02, gs256):
    with pytest.raises(GeometryError):
        contract_psi(mask02, gs256, [4.5, 0.0])


def test_cache_reuses_results(mask02, gs256, cache, centre02):
    assert reduce_at(mask02, gs256, mask02.center, cache=cache) is centre02


# --- assembly -------------------------------------------------------------------------


def test_assemble_and_verify_at_centre(centre02, gs256, params, cache):
    rep = assemble_and_verify(centre02, params.with_eps(0.2), gs256, cache=cache)
    assert rep.passed, rep.checks
    assert rep.M_defect <= 0.1
    np.testing.assert_allclose(rep.M, rep.M.T, atol=1e-8 * gs256.alpha)
    assert rep.min_interior_u > 0
    assert rep.center_offset == pytest.approx(0.0, abs=1e-12)
    assert rep.as_dict()["checks"] == rep.checks


def test_physical_field_rescales_box(centre02):
    u = physical_field(centre02.u_eps_rescaled, 0.2)
    assert u.grid.half_width == pytest.approx(3.2)
    assert np.array_equal(u.values, centre02.u_eps_rescaled.values)


def test_eps_slope_exact():
    eps = np.array([0.4, 0.2, 0.1])
    assert eps_slope(eps, 7.0 * eps**3) == pytest.approx(3.0, abs=1e-12)
