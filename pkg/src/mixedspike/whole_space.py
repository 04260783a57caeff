"""Whole-space objects: fundamental solutions, the ground state and its modes.

The ground state ``w`` solves ``-Δw + (-Δ)^s w + w = w^p`` on the periodic
box.  It is found in two phases: a sup-normalised fixed-point iteration
``w <- (-Δ + (-Δ)^s + 1)^{-1} w^p`` that converges along rays, followed by
Newton refinement with MINRES on the Jacobian.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.sparse.linalg import LinearOperator, lobpcg

from .config import DEFAULT_TOLERANCES, Tolerances
from .errors import (
    ConfigError,
    GeometryError,
    GroundStateNotFoundError,
    InsufficientDataError,
    KernelDimensionError,
    RefinementError,
    SingularSymbolError,
    SolverDivergenceError,
)
from .spectral_core import (
    DecayFit,
    GridSpec,
    ScalarField,
    SymbolSpec,
    apply_multiplier,
    fit_decay,
    integrate,
    krylov_vector_solve,
    lowpass,
    multiply_array,
    phase_shift,
    solve_multiplier,
    spectral_derivative,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelParams:
    """Dimension, fractional order, nonlinearity exponent and ε.

    ``mu`` is the exponent of the weight ``(1 + |x - ξ|)^μ`` in the norm used
    for the perturbation; it defaults to the midpoint of its admissible window.
    """

    dim: int
    s: float
    p: float
    eps: float = 0.1
    mu: float | None = None
    nonlocal_sign: float = 1.0  # -1 only for fault injection

    def __post_init__(self):
        n, s, p = self.dim, self.s, self.p
        if n < 1 or n > 3:
            raise ConfigError(f"dim must be 1, 2 or 3, got {n}")
        if not 0 < s < 1:
            raise ConfigError(f"s must lie in (0, 1), got {s}")
        if not p > 1:
            raise ConfigError(f"p must exceed 1, got {p}")
        if n >= 3 and not p < (n + 2) / (n - 2):
            raise ConfigError(f"p={p} is not subcritical for n={n} (need p < {(n + 2) / (n - 2)})")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        lo, hi = self.mu_window
        if not lo < hi:
            raise ConfigError(f"empty window for mu: ({lo}, {hi})")
        if self.mu is None:
            object.__setattr__(self, "mu", 0.5 * (lo + hi))
        elif not lo < self.mu < hi:
            raise ConfigError(f"mu={self.mu} outside its window ({lo}, {hi})")
        if self.gamma1 <= 0:
            raise ConfigError("gamma1 must be positive")

    @property
    def mu_window(self) -> tuple[float, float]:
        n, s, p = self.dim, self.s, self.p
        return n / 2, min(p * (n + 2 * s) - n / 2 - 2 * s, n + 2 * s)

    @property
    def gamma1(self) -> float:
        n, s, p = self.dim, self.s, self.p
        return min(n + 2 * s, p * (n + 2 * s) - self.mu)

    @property
    def gamma(self) -> float:
        n, s, p = self.dim, self.s, self.p
        q = min(1.0, p - 1.0)
        return min(n + 2 * s - self.mu * max(0.0, 2.0 - p), q * self.gamma1)

    @property
    def decay_exponent(self) -> float:
        """``n + 2s``: decay of ``w`` and ``K``."""
        return self.dim + 2 * self.s

    @property
    def energy_exponent(self) -> float:
        """``n + 4s``: decay of the reduced energy in the distance to the boundary."""
        return self.dim + 4 * self.s

    def symbol(self, mass: float = 1.0) -> SymbolSpec:
        return SymbolSpec(s=self.s, local_coeff=1.0, nonlocal_coeff=self.nonlocal_sign, mass=mass)

    def with_eps(self, eps: float) -> "ModelParams":
        return ModelParams(self.dim, self.s, self.p, eps, self.mu, self.nonlocal_sign)

    def as_dict(self) -> dict:
        return {
            "dim": self.dim, "s": self.s, "p": self.p, "eps": self.eps, "mu": self.mu,
            "gamma1": self.gamma1, "gamma": self.gamma,
        }


# ---------------------------------------------------------------------------
# fundamental solutions and translation
# ---------------------------------------------------------------------------


def fundamental_solution(params: ModelParams, mass: float, grid: GridSpec, band_limited: bool = True) -> ScalarField:
    """``K`` solving ``(-Δ + (-Δ)^s + mass) K = δ``, centred on ``grid.center_cell``.

    With ``band_limited`` the discrete delta is passed through
    :func:`~mixedspike.spectral_core.lowpass` first; this removes the
    checkerboard ringing that the sharp spectral cutoff otherwise leaves in
    the far tail.  ``band_limited=False`` gives exactly
    ``solve_multiplier(ScalarField.delta(grid))``.
    """
    if not mass > 0:
        raise SingularSymbolError(f"mass must be positive, got {mass}")
    delta = ScalarField.delta(grid)
    if band_limited:
        delta = lowpass(delta)
    return solve_multiplier(delta, params.symbol(mass))


def decay_window(grid: GridSpec) -> tuple[float, float]:
    """Default annulus ``[3, 3L/8]`` for tail fits: past the core, clear of periodic images."""
    return 3.0, 0.375 * grid.half_width


def ray_profiles(field: ScalarField) -> list[tuple[np.ndarray, np.ndarray]]:
    """Samples along the axis and diagonal rays leaving ``grid.center_cell``.

    Each entry is ``(r, values)`` with ``r`` the distance from the centre
    cell, running to the edge of the box.
    """
    grid = field.grid
    n, N = grid.dim, grid.points_per_axis
    c = N // 2
    dirs = []
    for a in range(n):
        for sgn in (1, -1):
            e = np.zeros(n, int)
            e[a] = sgn
            dirs.append(e)
    for signs in np.ndindex(*(2,) * n):
        dirs.append(np.array([1 if b == 0 else -1 for b in signs]))
    out = []
    for e in dirs:
        steps = np.arange(0, N // 2)
        idx = c + np.outer(steps, e)
        ok = np.all((idx >= 0) & (idx < N), axis=1)
        idx = idx[ok]
        r = steps[ok] * grid.spacing * float(np.linalg.norm(e))
        out.append((r, field.values[tuple(idx.T)]))
    return out


def ray_monotonicity_violations(field: ScalarField) -> int:
    """Number of non-decreasing steps along all sampled rays (0 for a radially decreasing field)."""
    return int(sum(np.count_nonzero(np.diff(v) >= 0) for _, v in ray_profiles(field)))


def translate(field: ScalarField, xi, margin: float = 1.0) -> ScalarField:
    """``x -> field(x - xi)`` via Fourier phase shift."""
    pt = field.grid.check_point(xi, margin=margin)
    if not np.any(pt):
        return field
    return ScalarField(field.grid, phase_shift(field.values, field.grid, pt))


# ---------------------------------------------------------------------------
# ground state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectrumReport:
    """Bottom of the spectrum of ``-Δ + (-Δ)^s + 1 - p w^{p-1}``."""

    eigenvalues: tuple[float, ...]
    kernel_dim: int
    kernel_correlations: tuple[float, ...]  # |proj onto span{Z_i}| / |phi| per kernel eigenvector
    gap: float  # smallest |λ| outside the kernel cluster
    next_eigenvalue: float  # first eigenvalue above the kernel cluster

    def as_dict(self) -> dict:
        return {
            "eigenvalues": list(self.eigenvalues),
            "kernel_dim": self.kernel_dim,
            "kernel_correlations": list(self.kernel_correlations),
            "gap": self.gap,
            "next_eigenvalue": self.next_eigenvalue,
        }


@dataclass(frozen=True)
class GroundState:
    params: ModelParams
    w: ScalarField
    energy: float
    alpha: float
    modes: tuple[ScalarField, ...]
    residual: float  # ||P w - w^p||_2 (absolute)
    spectrum: SpectrumReport | None = None
    fixed_point_iterations: int = 0
    newton_iterations: int = 0
    gram: np.ndarray = dc_field(default=None, repr=False)

    @property
    def grid(self) -> GridSpec:
        return self.w.grid

    @property
    def relative_residual(self) -> float:
        return self.residual / self.w.norm_l2()

    def mode_gram(self) -> np.ndarray:
        return np.array([[integrate(a * b) for b in self.modes] for a in self.modes])

    def require_nondegenerate(self) -> None:
        if self.spectrum is not None and self.spectrum.kernel_dim != self.params.dim:
            raise KernelDimensionError(
                f"kernel dimension {self.spectrum.kernel_dim} != n = {self.params.dim}",
                spectrum=self.spectrum,
            )


def default_initial_guess(params: ModelParams, grid: GridSpec) -> ScalarField:
    amp = params.p ** (1.0 / (params.p - 1.0))
    return ScalarField.from_radial(grid, lambda r: amp * np.exp(-0.5 * r**2))


def ground_state_residual(w: ScalarField, params: ModelParams) -> ScalarField:
    """``P w - w_+^p``."""
    return apply_multiplier(w, params.symbol()) - w.positive_power(params.p)


def energy_whole_space(u: ScalarField, params: ModelParams) -> float:
    """``½<u, P u> - 1/(p+1) ∫ u_+^{p+1}`` on the whole box."""
    quad = integrate(u * apply_multiplier(u, params.symbol()))
    return 0.5 * quad - integrate(u.positive_power(params.p + 1)) / (params.p + 1)


def _fixed_point_phase(params, w0: ScalarField, max_iter: int, stall: float):
    p, sym = params.p, params.symbol()
    grid = w0.grid
    top = float(np.max(w0.values))
    if not top > 0:
        raise GroundStateNotFoundError("initial guess has no positive part")
    what = w0.values / top
    best = (math.inf, None)
    prev = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        t = multiply_array(np.maximum(what, 0.0) ** p, grid, sym, inverse=True)
        sigma = float(np.max(t))
        if not np.isfinite(sigma) or sigma <= 0:
            raise GroundStateNotFoundError("fixed-point iteration collapsed to zero; try a different init")
        cand = sigma ** (-1.0 / (p - 1.0)) * what
        res_vec = multiply_array(cand, grid, sym) - np.maximum(cand, 0.0) ** p
        res = float(np.linalg.norm(res_vec) / np.linalg.norm(cand))
        if res < best[0]:
            best = (res, cand)
        what = t / sigma
        if res < 1e-3 or abs(prev - res) <= stall * res:
            break
        prev = res
    if best[1] is None or not np.all(np.isfinite(best[1])):
        raise GroundStateNotFoundError("fixed-point iteration diverged; try a different init")
    return ScalarField(grid, best[1]), it


def _project_out(vec: np.ndarray, modes: list[np.ndarray]) -> np.ndarray:
    for z in modes:
        vec = vec - (np.vdot(z, vec) / np.vdot(z, z)) * z
    return vec


def _newton(params, w: ScalarField, tol: float, max_newton: int, solver_tol: float):
    p, sym = params.p, params.symbol()
    grid = w.grid
    v = w.values.copy()
    wnorm = np.linalg.norm(v)
    best = math.inf
    steps = 0
    for steps in range(max_newton + 1):
        F = multiply_array(v, grid, sym) - np.maximum(v, 0.0) ** p
        res = float(np.linalg.norm(F) / np.linalg.norm(v))
        best = min(best, res)
        if res <= tol:
            return ScalarField(grid, v), steps
        if steps == max_newton:
            break
        pot = p * np.maximum(v, 0.0) ** (p - 1.0)
        zs = [spectral_derivative(ScalarField(grid, v), a).values.ravel() for a in range(grid.dim)]

        def jac(x, pot=pot):
            xs = x.reshape(grid.shape)
            return (multiply_array(xs, grid, sym) - pot * xs).ravel()

        def prec(x):
            return multiply_array(x.reshape(grid.shape), grid, sym, inverse=True).ravel()

        try:
            out = krylov_vector_solve(jac, -F.ravel(), max(solver_tol, 1e-3 * res), 4000,
                                      precond=prec, method="minres")
        except SolverDivergenceError as exc:
            raise RefinementError(f"Newton linear solve failed: {exc}", best) from exc
        step = _project_out(out.solution, zs).reshape(grid.shape)
        v = v + step
        if np.linalg.norm(v) > 1e6 * wnorm or not np.all(np.isfinite(v)):
            break
    raise RefinementError("Newton refinement stagnated", best)


def compute_ground_state(
    params: ModelParams,
    grid: GridSpec,
    init: ScalarField | None = None,
    *,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    with_spectrum: bool = True,
    n_eigen: int = 12,
    max_fixed_point: int = 400,
    max_newton: int = 12,
    seed: int = 0,
) -> GroundState:
    """Radial ground state centred at the origin, its modes, energy and spectrum."""
    if grid.dim != params.dim:
        raise ConfigError("grid and params disagree on the dimension")
    if grid.spacing > 0.25:
        raise ConfigError(f"grid spacing {grid.spacing} does not resolve the core (need h <= 0.25)")
    w0 = init if init is not None else default_initial_guess(params, grid)
    w1, n_fp = _fixed_point_phase(params, w0, max_fixed_point, stall=1e-3)
    if w1.max_abs() < 1e-8:
        raise GroundStateNotFoundError("iteration converged to the zero field; try a different init")
    if float(w1.values.min()) > 0.1 * float(w1.values.max()):
        raise GroundStateNotFoundError("iteration converged to a non-localized state; enlarge the box")
    w, n_newton = _newton(params, w1, tolerances.ground_state * 0.1, max_newton, tolerances.solver)
    residual = ground_state_residual(w, params).norm_l2()
    if residual > tolerances.ground_state * w.norm_l2():
        raise RefinementError("residual above target after refinement", residual / w.norm_l2())
    modes = tuple(spectral_derivative(w, a) for a in range(grid.dim))
    alpha = integrate(modes[0] * modes[0])
    energy = energy_whole_space(w, params)
    gs = GroundState(params, w, energy, alpha, modes, residual, None, n_fp, n_newton)
    if with_spectrum:
        spec = linearized_spectrum(gs, k=n_eigen, tol=tolerances.eigen, seed=seed)
        gs = GroundState(params, w, energy, alpha, modes, residual, spec, n_fp, n_newton)
    log.info("ground state: residual %.2e, energy %.8f, alpha %.6f", residual, energy, alpha)
    return gs


def linearized_spectrum(gs: GroundState, k: int = 12, tol: float = 1e-8, seed: int = 0,
                        kernel_fraction: float = 1e-3) -> SpectrumReport:
    """Lowest ``k`` eigenpairs of ``L = P - p w^{p-1}``.

    Uses LOBPCG preconditioned by the inverse multiplier ``P^{-1}``, which
    turns ``L`` into a compact perturbation of the identity.  Eigenvalues
    with ``|λ| <= kernel_fraction * gap`` form the kernel cluster.
    """
    params, grid = gs.params, gs.grid
    sym = params.symbol()
    pot = params.p * np.maximum(gs.w.values, 0.0) ** (params.p - 1)
    size = grid.points_per_axis**grid.dim

    def mv(X):
        X = np.asarray(X).reshape(size, -1)
        out = np.empty_like(X)
        for j in range(X.shape[1]):
            xs = X[:, j].reshape(grid.shape)
            out[:, j] = (multiply_array(xs, grid, sym) - pot * xs).ravel()
        return out

    def pc(X):
        X = np.asarray(X).reshape(size, -1)
        out = np.empty_like(X)
        for j in range(X.shape[1]):
            out[:, j] = multiply_array(X[:, j].reshape(grid.shape), grid, sym, inverse=True).ravel()
        return out

    A = LinearOperator((size, size), matvec=mv, matmat=mv, dtype=float)
    M = LinearOperator((size, size), matvec=pc, matmat=pc, dtype=float)
    rng = np.random.default_rng(seed)
    # start from localized random vectors so the bound states are reached quickly
    env = np.exp(-0.125 * grid.radius() ** 2).ravel()
    X0 = rng.standard_normal((size, k)) * env[:, None]
    X0[:, 0] = gs.w.values.ravel()
    for a in range(min(grid.dim, k - 1)):
        X0[:, 1 + a] = gs.modes[a].values.ravel()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        vals, vecs = lobpcg(A, X0, M=M, tol=tol, maxiter=500, largest=False)
    for w_ in caught:
        log.info("lobpcg: %s", str(w_.message).splitlines()[0])
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]

    absv = np.abs(vals)
    # the kernel cluster: the n smallest |λ|, accepted if well separated from the rest
    idx = np.argsort(absv)
    n = grid.dim
    rest = absv[idx[n:]] if len(idx) > n else np.array([np.inf])
    gap = float(rest.min())
    kernel = [i for i in idx if absv[i] <= kernel_fraction * gap]
    Z = np.stack([m.values.ravel() for m in gs.modes], axis=1)
    Q, _ = np.linalg.qr(Z)
    corr = []
    for i in kernel:
        phi = vecs[:, i]
        corr.append(float(np.linalg.norm(Q.T @ phi) / np.linalg.norm(phi)))
    top = max(vals[i] for i in kernel) if kernel else 0.0
    above = [v for i, v in enumerate(vals) if i not in kernel and v > top]
    return SpectrumReport(
        eigenvalues=tuple(float(v) for v in vals),
        kernel_dim=len(kernel),
        kernel_correlations=tuple(corr),
        gap=gap,
        next_eigenvalue=float(min(above)) if above else math.inf,
    )


# ---------------------------------------------------------------------------
# decay of the translation modes
# ---------------------------------------------------------------------------


def gradient_norm(f: ScalarField) -> ScalarField:
    parts = [spectral_derivative(f, a) for a in range(f.grid.dim)]
    return ScalarField(f.grid, np.sqrt(sum(q.values**2 for q in parts)))


def hessian_norm(f: ScalarField) -> ScalarField:
    grid = f.grid
    acc = np.zeros(grid.shape)
    for a in range(grid.dim):
        da = spectral_derivative(f, a)
        for b in range(grid.dim):
            acc += spectral_derivative(da, b).values ** 2
    return ScalarField(grid, np.sqrt(acc))


def mode_decay_report(gs: GroundState, r_inner: float = 3.0, r_outer: float | None = None) -> list[DecayFit]:
    """Fitted decay of ``|Z_i|``, ``|∇Z_i|`` and ``|∇²Z_i|`` around the origin.

    Labels are ``Z<i>``, ``gradZ<i>`` and ``hessZ<i>`` (1-based).
    """
    grid = gs.grid
    if r_outer is None:
        r_outer = grid.half_width - 3.0
    if r_outer <= r_inner:
        raise InsufficientDataError("annulus [3, L-3] is empty; enlarge the box")
    centre = np.zeros(grid.dim)
    fits = []
    for i, z in enumerate(gs.modes, start=1):
        for label, fld in ((f"Z{i}", z), (f"gradZ{i}", gradient_norm(z)), (f"hessZ{i}", hessian_norm(z))):
            f = fit_decay(fld, centre, r_inner, r_outer)
            fits.append(DecayFit(f.exponent, f.intercept, f.r_inner, f.r_outer, f.residual, f.bins, label))
    return fits


def expected_mode_exponents(params: ModelParams) -> dict:
    """Decay exponents the theory guarantees for the modes (lower bounds)."""
    a = params.decay_exponent
    return {"first_pass": a, "Z": a + 1, "gradZ": a + 2, "hessZ": a + 3}
