import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixedspike.errors import ConfigError, GeometryError, GroundStateNotFoundError, KernelDimensionError
from mixedspike.spectral_core import GridSpec, ScalarField, apply_multiplier, integrate
from mixedspike.whole_space import (
    GroundState,
    ModelParams,
    SpectrumReport,
    compute_ground_state,
    decay_window,
    energy_whole_space,
    expected_mode_exponents,
    fundamental_solution,
    ground_state_residual,
    mode_decay_report,
    ray_monotonicity_violations,
    ray_profiles,
    translate,
)

# --- parameters ---------------------------------------------------------------


def test_default_parameters():
    p = ModelParams(2, 0.5, 2.0)
    assert p.mu_window == (1.0, 3.0)
    assert p.mu == 2.0
    assert p.gamma1 == 3.0
    assert p.decay_exponent == 3.0
    assert p.energy_exponent == 4.0


@pytest.mark.parametrize(
    "kw",
    [
        dict(dim=3, s=0.5, p=6.0),  # supercritical for n = 3
        dict(dim=4, s=0.5, p=2.0),
        dict(dim=2, s=1.0, p=2.0),
        dict(dim=2, s=0.5, p=1.0),
        dict(dim=2, s=0.5, p=2.0, eps=0.0),
        dict(dim=2, s=0.5, p=2.0, mu=3.5),
    ],
)
def test_invalid_parameters(kw):
    with pytest.raises(ConfigError):
        ModelParams(**kw)


def test_with_eps_keeps_everything_else():
    p = ModelParams(2, 0.3, 1.5, eps=0.4, mu=1.2)
    q = p.with_eps(0.1)
    assert (q.dim, q.s, q.p, q.mu, q.eps) == (2, 0.3, 1.5, 1.2, 0.1)


def _admissible():
    return st.tuples(st.integers(1, 3), st.floats(0.05, 0.95)).flatmap(
        lambda ns: st.tuples(
            st.just(ns[0]),
            st.just(ns[1]),
            st.floats(1.05, 8.0 if ns[0] < 3 else 4.9),
        )
    )


@settings(max_examples=200, deadline=None)
@given(_admissible())
def test_gamma1_limits(nsp):
    n, s, p = nsp
    try:
        par = ModelParams(n, s, p)
    except ConfigError:
        return
    assert par.gamma1 == pytest.approx(min(n + 2 * s, p * (n + 2 * s) - par.mu))
    assert par.gamma1 > n / 2 + 2 * s
    if p >= 2:
        assert par.gamma1 == pytest.approx(n + 2 * s)


# --- fundamental solution -------------------------------------------------------


def test_fundamental_solution_small_grid(params, small_grid):
    K = fundamental_solution(params, 1.0, small_grid)
    assert integrate(K) == pytest.approx(1.0, abs=1e-12)
    assert K.values.min() > 0
    assert ray_monotonicity_violations(K) == 0
    # P K equals the filtered delta: its integral is one and it is concentrated at the centre cell
    PK = apply_multiplier(K, params.symbol())
    assert integrate(PK) == pytest.approx(1.0, abs=1e-12)
    i = small_grid.points_per_axis // 2
    assert np.argmax(PK.values) == np.ravel_multi_index((i, i), small_grid.shape)


def test_raw_fundamental_solution_inverts_delta(params, small_grid):
    K = fundamental_solution(params, 1.0, small_grid, band_limited=False)
    PK = apply_multiplier(K, params.symbol())
    np.testing.assert_allclose(PK.values, ScalarField.delta(small_grid).values, atol=1e-10)


def test_fundamental_solution_mass_scaling(params, small_grid):
    # the symbol at k = 0 is the mass, so ∫K_m = 1/m
    K = fundamental_solution(params, 2.5, small_grid)
    assert integrate(K) == pytest.approx(0.4, abs=1e-12)


def test_ray_profiles_cover_axes_and_diagonals(small_grid):
    f = ScalarField.from_radial(small_grid, lambda r: np.exp(-r), center=small_grid.center_cell)
    rays = ray_profiles(f)
    assert len(rays) >= 4
    assert ray_monotonicity_violations(f) == 0
    bump = f.map(lambda v: v + np.where(np.abs(v - 0.05) < 0.01, 0.1, 0.0))
    assert ray_monotonicity_violations(bump) > 0


def test_decay_window():
    assert decay_window(GridSpec(2, 16.0, 256)) == (3.0, 6.0)
    assert decay_window(GridSpec(2, 32.0, 512)) == (3.0, 12.0)


def test_translate_by_cells_is_roll(small_grid):
    f = ScalarField.from_radial(small_grid, lambda r: np.exp(-r**2))
    h = small_grid.spacing
    t = translate(f, [2 * h, -3 * h])
    np.testing.assert_allclose(t.values, np.roll(f.values, (2, -3), axis=(0, 1)), atol=1e-12)
    with pytest.raises(GeometryError):
        translate(f, [small_grid.half_width, 0.0])


# --- ground state ------------------------------------------------------------------


def test_local_1d_oracle():
    # -w'' + w = w^2 on the line: w = (3/2) sech^2(x/2), I(w) = 6/5, and the
    # linearization has eigenvalues -5/4, 0, 3/4 below its continuum.
    par = ModelParams(1, 0.5, 2.0, nonlocal_sign=0.0)
    g = GridSpec(1, 16.0, 256)
    gs = compute_ground_state(par, g, with_spectrum=True)
    x = g.axis()
    period = 2 * g.half_width
    exact = sum(1.5 / np.cosh((x + m * period) / 2) ** 2 for m in range(-3, 4))
    np.testing.assert_allclose(gs.w.values, exact, atol=1e-9)
    assert gs.energy == pytest.approx(1.2, rel=1e-9)
    ev = gs.spectrum.eigenvalues
    assert ev[0] == pytest.approx(-1.25, abs=1e-8)
    assert abs(ev[1]) < 1e-8
    assert ev[2] == pytest.approx(0.75, abs=1e-5)
    assert gs.spectrum.kernel_dim == 1


def test_ground_state_small_grid(gs_small, params):
    gs = gs_small
    assert gs.relative_residual <= 1e-8
    assert gs.w.values.min() > 0
    p = params.p
    wp1 = integrate(gs.w.positive_power(p + 1))
    assert gs.energy == pytest.approx((0.5 - 1 / (p + 1)) * wp1, rel=1e-6)
    assert gs.energy == pytest.approx(energy_whole_space(gs.w, params), rel=1e-12)
    assert gs.spectrum.kernel_dim == 2
    assert min(gs.spectrum.kernel_correlations) >= 0.99
    assert gs.spectrum.next_eigenvalue >= 0.1
    assert gs.spectrum.eigenvalues[0] < 0
    np.testing.assert_allclose(gs.mode_gram() / gs.alpha, np.eye(2), atol=1e-6)


def test_ground_state_is_radial(gs_small):
    w = gs_small.w.values
    np.testing.assert_allclose(w, w.T, atol=1e-12)
    np.testing.assert_allclose(w, w[::-1, :], atol=1e-12)


def test_zero_initial_guess_is_rejected(params, small_grid):
    with pytest.raises(GroundStateNotFoundError):
        compute_ground_state(params, small_grid, ScalarField.zeros(small_grid), with_spectrum=False)


def test_coarse_grid_is_rejected(params):
    with pytest.raises(ConfigError):
        compute_ground_state(params, GridSpec(2, 8.0, 32), with_spectrum=False)


def test_residual_helper_vanishes_on_ground_state(gs_small, params):
    r = ground_state_residual(gs_small.w, params)
    assert r.norm_l2() == pytest.approx(gs_small.residual, rel=1e-6, abs=1e-12)


def test_require_nondegenerate_raises_on_mismatch(gs_small):
    spec = SpectrumReport((-1.0, 0.0, 0.0, 0.0), 3, (1.0, 1.0, 0.5), 0.5, 0.5)
    bad = GroundState(gs_small.params, gs_small.w, gs_small.energy, gs_small.alpha, gs_small.modes,
                      gs_small.residual, spec)
    with pytest.raises(KernelDimensionError):
        bad.require_nondegenerate()


def test_mode_decay_report_labels(gs_small):
    fits = mode_decay_report(gs_small, 2.0, 5.0)
    assert [f.label for f in fits] == ["Z1", "gradZ1", "hessZ1", "Z2", "gradZ2", "hessZ2"]
    exp = expected_mode_exponents(gs_small.params)
    assert exp == {"first_pass": 3.0, "Z": 4.0, "gradZ": 5.0, "hessZ": 6.0}


def test_small_box_constant_state_is_rejected(params):
    # on [-4, 4]^2 the iteration lands on the constant solution w = 1
    with pytest.raises(GroundStateNotFoundError):
        compute_ground_state(params, GridSpec(2, 4.0, 32), with_spectrum=False)
