"""Acceptance criteria 1-10 at desk scale (n = 2, s = 1/2, p = 2).

Each test records one PASS/FAIL line, printed in the terminal summary, and
then asserts.  Whole-space criteria run on [-32, 32]^2 with 512 cells per
axis; domain criteria on [-16, 16]^2 with 256 cells per axis.
"""

import time

import numpy as np
import pytest

from mixedspike import cli
from mixedspike.dirichlet import DomainSpec, barrier_h, deficiency_v, make_mask, solve_dirichlet
from mixedspike.energy import reduced_energy_H, scan_landscape
from mixedspike.reduction import ReductionCache, assemble_and_verify, contract_psi, eps_slope, optimize_xi
from mixedspike.spectral_core import ScalarField, apply_multiplier, fit_decay, integrate, solve_multiplier
from mixedspike.whole_space import (
    compute_ground_state,
    decay_window,
    fundamental_solution,
    mode_decay_report,
    ray_monotonicity_violations,
    translate,
)

pytestmark = pytest.mark.acceptance

EPS = (0.4, 0.2, 0.1)
FIT_BAND = 0.3
BALL = DomainSpec.ball(1.0)


@pytest.fixture
def record(acceptance_log):
    def _record(num, ok, detail):
        acceptance_log[num] = (bool(ok), detail)
        return ok

    return _record


@pytest.fixture(scope="module")
def whole_space_gs(params, grid512):
    t = time.perf_counter()
    gs = compute_ground_state(params, grid512, with_spectrum=True)
    return gs, time.perf_counter() - t


@pytest.fixture(scope="module")
def domain_gs(params, grid256):
    t = time.perf_counter()
    gs = compute_ground_state(params, grid256, with_spectrum=True)
    return gs, time.perf_counter() - t


def test_criterion_01_spectral_exactness(record, grid256, params):
    t = time.perf_counter()
    sym = params.symbol()
    g = grid256
    x, y = g.coords()
    k0 = np.pi / g.half_width
    worst = 0.0
    for m in [(1, 0), (0, 3), (5, 7), (31, -17), (64, 64), (100, 27)]:
        kx, ky = k0 * m[0], k0 * m[1]
        f = ScalarField(g, np.cos(kx * x + ky * y))
        exact = sym(np.hypot(kx, ky)) * f.values
        err = np.max(np.abs(apply_multiplier(f, sym).values - exact)) / np.max(np.abs(exact))
        worst = max(worst, float(err))
    rng = np.random.default_rng(0)
    f = ScalarField(g, rng.standard_normal(g.shape))
    inv = float(np.max(np.abs(solve_multiplier(apply_multiplier(f, sym), sym).values - f.values)))
    dt = time.perf_counter() - t
    ok = worst <= 1e-12 and inv <= 1e-10 and dt < 1.0
    record(1, ok, f"mode rel err {worst:.1e} (<=1e-12), inverse {inv:.1e} (<=1e-10), {dt:.2f}s (<1s)")
    assert ok


def test_criterion_02_fundamental_solution(record, grid512, params):
    t = time.perf_counter()
    K = fundamental_solution(params, 1.0, grid512)
    total = integrate(K)
    lo, hi = decay_window(grid512)
    fit = fit_decay(K, grid512.center_cell, lo, hi)
    violations = ray_monotonicity_violations(K)
    dt = time.perf_counter() - t
    a = params.decay_exponent
    ok = abs(total - 1) <= 1e-3 and abs(fit.exponent - a) <= 0.2 and violations == 0 and dt < 5
    record(2, ok, f"∫K={total:.6f}, exponent {fit.exponent:.3f} on [{lo:g},{hi:g}] (target {a:g}±0.2), "
                  f"ray violations {violations}, {dt:.1f}s (<5s)")
    assert ok


def test_criterion_03_ground_state(record, whole_space_gs, params):
    gs, dt = whole_space_gs
    grid = gs.grid
    lo, hi = decay_window(grid)
    fit = fit_decay(gs.w, np.zeros(2), lo, hi)
    p = params.p
    ident = (0.5 - 1 / (p + 1)) * integrate(gs.w.positive_power(p + 1))
    rel_energy = abs(gs.energy - ident) / abs(ident)
    spec = gs.spectrum
    ok = (gs.residual <= 1e-8 and gs.relative_residual <= 1e-8
          and abs(fit.exponent - params.decay_exponent) <= 0.2
          and rel_energy <= 1e-6
          and spec.kernel_dim == 2 and min(spec.kernel_correlations) >= 0.99
          and spec.next_eigenvalue >= 0.1 and dt < 120)
    record(3, ok, f"residual {gs.residual:.1e}, decay {fit.exponent:.3f} (3±0.2), energy identity {rel_energy:.1e}, "
                  f"kernel dim {spec.kernel_dim}, corr {min(spec.kernel_correlations):.4f}, "
                  f"next eigenvalue {spec.next_eigenvalue:.3f}, {dt:.0f}s (<120s)")
    assert ok


def test_criterion_04_mode_decay(record, whole_space_gs, params):
    gs, _ = whole_space_gs
    t = time.perf_counter()
    lo, hi = decay_window(gs.grid)
    fits = {f.label: f.exponent for f in mode_decay_report(gs, lo, hi)}
    gram = gs.mode_gram()
    gram_err = float(np.max(np.abs(gram - gs.alpha * np.eye(2)))) / gs.alpha
    dt = time.perf_counter() - t
    a = params.decay_exponent
    z = min(fits["Z1"], fits["Z2"])
    ok = z >= a - 0.2 and gram_err <= 1e-6 and dt < 10
    record(4, ok, f"|Z_i| exponent {z:.3f} (>= {a - 0.2:g}; improved bound {a + 1:g}), "
                  f"grad {min(fits['gradZ1'], fits['gradZ2']):.2f}, hess {min(fits['hessZ1'], fits['hessZ2']):.2f}, "
                  f"Gram/α-I {gram_err:.1e}, {dt:.1f}s (<10s)")
    assert ok


def test_criterion_05_barrier_and_maximum_principle(record, domain_gs, params, grid256):
    gs, _ = domain_gs
    mask = make_mask(BALL, params.with_eps(0.1), grid256)
    xi = mask.center
    d = mask.distance_to_boundary(xi)
    t = time.perf_counter()
    w_xi = translate(gs.w, xi)
    ubar = solve_dirichlet(w_xi.positive_power(params.p), mask).solution
    v = deficiency_v(w_xi, ubar)
    h = barrier_h(mask, xi, fundamental_solution(params, 1.0, grid256))
    dt = time.perf_counter() - t
    ratio = v.values / h.values
    band = ratio.max() / ratio.min()
    inside = mask.inside
    ok = (v.values.min() > 0 and np.all(ubar.values[inside] < w_xi.values[inside])
          and ratio.min() > 0 and band <= 1e3 and dt < 60)
    record(5, ok, f"d={d:g}, min v {v.values.min():.2e} (>0), v/h in [{ratio.min():.3g}, {ratio.max():.3g}] "
                  f"ratio {band:.2f} (<=1e3), {dt:.1f}s (<60s)")
    assert ok


def test_criterion_06_reduced_energy_scaling(record, domain_gs, params, grid256):
    gs, _ = domain_gs
    mask = make_mask(BALL, params.with_eps(0.1), grid256)
    t = time.perf_counter()
    scan = scan_landscape(mask, gs, delta=0.15, stride=4)
    dt = time.perf_counter() - t
    a = params.energy_exponent
    lo, hi = scan.fit_range
    ok = (abs(scan.fit.exponent - a) <= FIT_BAND and scan.interior_min < scan.collar_min and dt < 600)
    record(6, ok, f"H~d^-{scan.fit.exponent:.3f} on d in [{lo:g},{hi:g}] (target {a:g}±{FIT_BAND}), "
                  f"interior min {scan.interior_min:.4g} < collar min {scan.collar_min:.4g}, "
                  f"{len(scan.interior)}+{len(scan.collar)} points, {dt:.0f}s (<600s)")
    assert ok


def test_criterion_07_expansion_remainder(record, domain_gs, params, grid256):
    gs, _ = domain_gs
    t = time.perf_counter()
    a = params.energy_exponent
    normalized = []
    for eps in EPS:
        mask = make_mask(BALL, params.with_eps(eps), grid256)
        rep = reduced_energy_H(mask, mask.center, gs)
        normalized.append(abs(rep.remainder) / eps**a)
    dt = time.perf_counter() - t
    ok = all(x > y for x, y in zip(normalized, normalized[1:])) and dt < 300
    record(7, ok, "|remainder|/ε^4 = " + ", ".join(f"{x:.4g}" for x in normalized)
           + f" (strictly decreasing), {dt:.1f}s (<300s)")
    assert ok


def test_criterion_08_contraction(record, domain_gs, params, grid256):
    gs, _ = domain_gs
    t = time.perf_counter()
    norms, worst_ratio = [], 0.0
    for eps in EPS:
        mask = make_mask(BALL, params.with_eps(eps), grid256)
        res = contract_psi(mask, gs, mask.center)
        norms.append(res.psi_norm_weighted)
        worst_ratio = max(worst_ratio, res.max_ratio_after_second)
    dt = time.perf_counter() - t
    slope = eps_slope(EPS, norms)
    g1 = params.gamma1
    ok = worst_ratio < 1 and abs(slope - g1) <= FIT_BAND and dt < 600
    record(8, ok, f"max ratio after iterate 2 {worst_ratio:.3f} (<1), |Ψ| = "
                  + ", ".join(f"{x:.4g}" for x in norms)
                  + f", slope {slope:.3f} (target γ1={g1:g}±{FIT_BAND}), {dt:.0f}s (<600s)")
    assert ok


def test_criterion_09_criticality_and_assembly(record, domain_gs, params, grid256):
    gs, gs_time = domain_gs
    t = time.perf_counter()
    reports = []
    for eps in EPS:
        p_eps = params.with_eps(eps)
        mask = make_mask(BALL, p_eps, grid256)
        cache = ReductionCache()
        res = optimize_xi(mask, gs, p_eps, cache=cache)
        reports.append(assemble_and_verify(res, p_eps, gs, cache=cache))
    dt = time.perf_counter() - t + gs_time
    h = grid256.spacing
    c_ratio = max(r.max_abs_c / r.alpha for r in reports)
    offset = max(r.center_offset for r in reports)
    m_defect = reports[-1].M_defect
    slope = eps_slope(EPS, [r.sup_error for r in reports])
    g1 = params.gamma1
    ok = c_ratio <= 1e-6 and offset <= 2 * h and m_defect <= 0.1 and slope >= g1 - FIT_BAND and dt < 1200
    record(9, ok, f"max|c|/α {c_ratio:.1e} (<=1e-6), |ξ-centre| {offset:.1e} (<=2h={2 * h:g}), "
                  f"|M+αI|/α at ε=0.1 {m_defect:.4f} (<=0.1), sup-error slope {slope:.3f} (>= {g1 - FIT_BAND:g}), "
                  f"{dt:.0f}s (<1200s)")
    assert ok


def test_criterion_10_fault_sensitivity(record):
    cfg = cli.load_config(None, {"negate_nonlocal": "true"})
    t = time.perf_counter()
    results = cli.run_property_suite(cfg)
    dt = time.perf_counter() - t
    passed, detail = results["maximum_principle"]
    ok = (not passed) and dt < 60
    record(10, ok, f"negated nonlocal term: maximum-principle suite {'passes' if passed else 'fails'} "
                   f"({detail}), {dt:.0f}s (<60s)")
    assert ok
