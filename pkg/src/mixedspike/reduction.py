"""Finite-dimensional reduction: projected solves, the contraction for ``Ψ(ξ)``, ``J_ε`` and its minimizer.

The perturbation ``ψ`` of ``ū_ξ`` solves, in ``Ω_ε`` with zero exterior data,

    L ψ = E(ψ) + Σ c_i Z_i,   ∫ ψ Z_i = 0,

with ``L = -Δ + (-Δ)^s + 1 - p w_ξ^{p-1}`` and ``Z_i = ∂_i w(· - ξ)``.
The linear step is a symmetric bordered system in ``(ψ, c)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.optimize import minimize

from .config import DEFAULT_TOLERANCES, Tolerances
from .dirichlet import DomainMask, deficiency_v, solve_dirichlet, weighted_norm
from .energy import energy_I_eps, landscape_points
from .errors import (
    BoundaryMinimumError,
    ContractionFailureError,
    GeometryError,
    InsufficientDataError,
    SolverDivergenceError,
)
from .spectral_core import (
    ScalarField,
    apply_multiplier,
    krylov_vector_solve,
    multiply_array,
    same_grid,
)
from .whole_space import GroundState, ModelParams, translate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProjectedSolve:
    psi: ScalarField
    c: np.ndarray
    residual: float
    orthogonality_defect: float  # max_i |∫ψ Z_i| / α
    iterations: int = 0


class BorderedSystem:
    """The saddle operator ``[[A, -B], [-B^T, 0]]`` at a fixed ``ξ``.

    ``A = M (P - V) M + (I - M)`` is the masked linearized operator and the
    columns of ``B`` are the interior-restricted modes.  The preconditioner
    is block diagonal: the masked inverse symbol for ``ψ`` and the inverse of
    ``B^T P^{-1} B`` for ``c``; both blocks are positive definite, as MINRES
    requires.
    """

    def __init__(self, mask: DomainMask, gs: GroundState, xi):
        grid = same_grid(gs.w, mask.signed_distance)
        self.mask, self.grid = mask, grid
        self.xi = grid.check_point(xi, margin=1.0)
        self.params = mask.params
        self.sym = self.params.symbol()
        self.inside = mask.inside
        self.alpha = gs.alpha
        p = self.params.p
        self.w_xi = translate(gs.w, self.xi)
        self.potential = p * np.maximum(self.w_xi.values, 0.0) ** (p - 1)
        self.modes = [np.where(self.inside, translate(z, self.xi).values, 0.0) for z in gs.modes]
        self.B = np.stack([z.ravel() for z in self.modes], axis=1)
        self.dv = grid.cell_volume
        self.size = int(np.prod(grid.shape))
        self.n = len(self.modes)
        pinvB = np.stack(
            [np.where(self.inside, multiply_array(z, grid, self.sym, inverse=True), 0.0).ravel() for z in self.modes],
            axis=1,
        )
        self.schur_inv = np.linalg.inv(self.B.T @ pinvB)

    def apply_A(self, v: np.ndarray) -> np.ndarray:
        x = v.reshape(self.grid.shape)
        xi = np.where(self.inside, x, 0.0)
        y = multiply_array(xi, self.grid, self.sym) - self.potential * xi
        return np.where(self.inside, y, x).ravel()

    def matvec(self, v: np.ndarray) -> np.ndarray:
        psi, c = v[: self.size], v[self.size:]
        top = self.apply_A(psi) - self.B @ c
        bottom = -(self.B.T @ psi)
        return np.concatenate([top, bottom])

    def precondition(self, v: np.ndarray) -> np.ndarray:
        x = v[: self.size].reshape(self.grid.shape)
        xi = np.where(self.inside, x, 0.0)
        y = np.where(self.inside, multiply_array(xi, self.grid, self.sym, inverse=True), x).ravel()
        return np.concatenate([y, self.schur_inv @ v[self.size:]])

    def solve(self, g: ScalarField, tol: float, x0: np.ndarray | None = None, max_iter: int = 3000) -> ProjectedSolve:
        rhs = np.concatenate([np.where(self.inside, g.values, 0.0).ravel(), np.zeros(self.n)])
        out = krylov_vector_solve(self.matvec, rhs, tol, max_iter, precond=self.precondition, method="minres", x0=x0, restarts=8)
        psi = np.where(self.inside, out.solution[: self.size].reshape(self.grid.shape), 0.0)
        c = out.solution[self.size:].copy()
        defect = max(abs(float(np.sum(psi * z)) * self.dv) for z in self.modes) / self.alpha
        return ProjectedSolve(ScalarField(self.grid, psi), c, out.residual, defect, out.iterations)

    def multiplier_identity(self, ps: ProjectedSolve, g: ScalarField) -> np.ndarray:
        """``∫ (Lψ - g) Z_j / α`` for each ``j``; equals ``c_j`` up to the mode Gram defect."""
        r = self.apply_A(ps.psi.values.ravel()).reshape(self.grid.shape) - np.where(self.inside, g.values, 0.0)
        return np.array([float(np.sum(r * z)) * self.dv for z in self.modes]) / self.alpha


def solve_projected(
    g: ScalarField,
    mask: DomainMask,
    gs: GroundState,
    xi,
    tol: float = DEFAULT_TOLERANCES.projected,
) -> ProjectedSolve:
    """Solve ``Lψ = g + Σ c_i Z_i`` in ``Ω_ε``, ``ψ = 0`` outside, ``∫ψ Z_i = 0``."""
    gs.require_nondegenerate()
    return BorderedSystem(mask, gs, xi).solve(g, tol)


def nonlinear_error_E(
    psi: ScalarField,
    ubar: ScalarField,
    w_xi: ScalarField,
    p: float,
    mask: DomainMask | None = None,
) -> ScalarField:
    """``E(ψ) = (ū_ξ + ψ)_+^p - w_ξ^p - p w_ξ^{p-1} ψ``, zero outside ``mask`` when given.

    The positive part keeps the power real where ``ū_ξ + ψ`` dips below zero.
    """
    same_grid(psi, ubar, w_xi)
    u = np.maximum(ubar.values + psi.values, 0.0) ** p
    w = np.maximum(w_xi.values, 0.0)
    e = u - w**p - p * w ** (p - 1) * psi.values
    if mask is not None:
        e = np.where(mask.inside, e, 0.0)
    return ScalarField(psi.grid, e)


# ---------------------------------------------------------------------------
# contraction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReductionResult:
    xi: tuple[float, ...]
    psi: ScalarField = dc_field(repr=False)
    c: np.ndarray
    psi_norm_weighted: float
    J_eps: float
    u_eps_rescaled: ScalarField = dc_field(repr=False)
    pde_residual: float
    iterations: int
    ratios: tuple[float, ...] = ()
    ubar: ScalarField | None = dc_field(default=None, repr=False)
    w_xi: ScalarField | None = dc_field(default=None, repr=False)
    mask: DomainMask | None = dc_field(default=None, repr=False)
    orthogonality_defects: tuple[float, ...] = ()
    monotone_violations: tuple[int, ...] = ()  # indices into ratios

    @property
    def max_ratio_after_second(self) -> float:
        tail = self.ratios[1:]
        return max(tail) if tail else 0.0

    @property
    def max_abs_c(self) -> float:
        return float(np.max(np.abs(self.c)))

    def as_dict(self) -> dict:
        return {
            "xi": list(self.xi), "c": [float(x) for x in self.c],
            "psi_norm_weighted": self.psi_norm_weighted, "J_eps": self.J_eps,
            "pde_residual": self.pde_residual, "iterations": self.iterations,
            "contraction_ratios": list(self.ratios),
            "monotone_violations": list(self.monotone_violations),
        }


def projected_residual(u: ScalarField, c: np.ndarray, system: BorderedSystem) -> float:
    """Interior sup of ``P u - u_+^p - Σ c_i Z_i``, relative to ``‖u_+^p‖_∞``."""
    up = u.positive_power(system.params.p).values
    r = apply_multiplier(u, system.sym).values - up - sum(ci * z for ci, z in zip(c, system.modes))
    return float(np.max(np.abs(r[system.inside])) / np.max(up))


def contract_psi(
    mask: DomainMask,
    gs: GroundState,
    xi,
    params: ModelParams | None = None,
    max_iter: int = 60,
    tol: float = DEFAULT_TOLERANCES.contraction,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    strict_monotone: bool = False,
) -> ReductionResult:
    """Iterate ``ψ_{k+1} = I_ξ[E(ψ_k)]`` from ``ψ_0 = 0``.

    Stops when ``‖ψ_{k+1} - ψ_k‖_{∞,ξ} <= tol · max(1, ‖ψ_{k+1}‖_{∞,ξ})``.
    Raises :class:`ContractionFailureError` after three consecutive ratios
    ``>= 1`` or when ``max_iter`` is exhausted.

    Successive-difference ratios that grow after the second iterate (beyond
    ``monotone_slack`` and above the round-off floor) are recorded in
    ``monotone_violations``; with ``strict_monotone`` they abort instead.
    The linearized map need not be self-adjoint, so mild oscillation of the
    ratios is expected at large ε.
    """
    params = mask.params if params is None else params
    gs.require_nondegenerate()
    system = BorderedSystem(mask, gs, xi)
    pt = system.xi
    if mask.distance_to_boundary(pt) < 1.0:
        raise GeometryError("ξ must keep distance >= 1 from ∂Ω_ε")
    p, mu = params.p, params.mu
    w_xi = system.w_xi
    ubar = solve_dirichlet(w_xi.positive_power(p), mask, tol=tolerances.solver).solution
    psi = ScalarField.zeros(mask.grid)
    diffs: list[float] = []
    ratios: list[float] = []
    defects: list[float] = []
    violations: list[int] = []
    ps = None
    converged = False
    for k in range(1, max_iter + 1):
        g = nonlinear_error_E(psi, ubar, w_xi, p, mask)
        ps = system.solve(g, tolerances.projected)
        diff = weighted_norm(ps.psi - psi, pt, mu)
        psi = ps.psi
        defects.append(ps.orthogonality_defect)
        if diffs:
            ratios.append(diff / diffs[-1] if diffs[-1] > 0 else 0.0)
        diffs.append(diff)
        size = weighted_norm(psi, pt, mu)
        if diff <= tol * max(1.0, size):
            converged = True
            break
        if len(ratios) >= 3 and all(r >= 1.0 for r in ratios[-3:]):
            raise ContractionFailureError(f"no contraction at ξ={tuple(pt)}, ε={params.eps}; try a smaller ε", ratios)
        floor = 1e3 * tol * max(1.0, size)
        if len(ratios) >= 3 and diff > floor and ratios[-1] > ratios[-2] * (1.0 + tolerances.monotone_slack):
            violations.append(len(ratios) - 1)
            if strict_monotone:
                raise ContractionFailureError(
                    f"contraction ratios increased after the second iterate at ξ={tuple(pt)}, ε={params.eps}", ratios
                )
    if not converged:
        raise ContractionFailureError(f"no convergence in {max_iter} iterations at ε={params.eps}", ratios)
    u = ubar + psi
    J = energy_I_eps(u, mask, params)
    return ReductionResult(
        xi=tuple(float(x) for x in pt), psi=psi, c=ps.c, psi_norm_weighted=weighted_norm(psi, pt, mu),
        J_eps=J, u_eps_rescaled=u, pde_residual=projected_residual(u, ps.c, system), iterations=k,
        ratios=tuple(ratios), ubar=ubar, w_xi=w_xi, mask=mask, orthogonality_defects=tuple(defects),
        monotone_violations=tuple(violations),
    )


# ---------------------------------------------------------------------------
# reduced functional and its minimizer
# ---------------------------------------------------------------------------


class ReductionCache:
    """``Ψ(ξ)`` results keyed by mask identity and ``ξ``; stored results are never mutated."""

    def __init__(self):
        self._store: dict = {}

    @staticmethod
    def _key(mask: DomainMask, xi) -> tuple:
        return (id(mask), tuple(round(float(x), 12) for x in np.ravel(xi)))

    def get(self, mask: DomainMask, xi) -> ReductionResult | None:
        return self._store.get(self._key(mask, xi))

    def put(self, mask: DomainMask, result: ReductionResult) -> None:
        self._store[self._key(mask, result.xi)] = result

    def __len__(self) -> int:
        return len(self._store)


def reduce_at(
    mask: DomainMask,
    gs: GroundState,
    xi,
    params: ModelParams | None = None,
    cache: ReductionCache | None = None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> ReductionResult:
    """``contract_psi`` through ``cache``."""
    if cache is not None:
        hit = cache.get(mask, xi)
        if hit is not None:
            return hit
    res = contract_psi(mask, gs, xi, params, tolerances=tolerances)
    if cache is not None:
        cache.put(mask, res)
    return res


def reduced_J(
    mask: DomainMask,
    gs: GroundState,
    xi,
    params: ModelParams | None = None,
    cache: ReductionCache | None = None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> float:
    """``J_ε(ξ) = I_ε(ū_ξ + Ψ(ξ))``."""
    return reduce_at(mask, gs, xi, params, cache, tolerances).J_eps


def _auto_stride(mask: DomainMask, delta: float, target: int) -> int:
    stride = 1
    while len(landscape_points(mask, delta, stride)[0]) > target:
        try:
            landscape_points(mask, delta, 2 * stride)
        except InsufficientDataError:
            break
        stride *= 2
    return stride


def _polish_multipliers(mask, gs, params, result, cache, tolerances, steps: int) -> ReductionResult:
    """Newton steps on ``c(ξ) = 0`` with a central-difference Jacobian (step 2h)."""
    h2 = 2.0 * mask.grid.spacing
    target = tolerances.multiplier * gs.alpha
    n = len(result.xi)
    for _ in range(steps):
        if result.max_abs_c <= 0.01 * target:
            break
        x = np.asarray(result.xi)
        jac = np.empty((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = h2
            cp = reduce_at(mask, gs, x + e, params, cache, tolerances).c
            cm = reduce_at(mask, gs, x - e, params, cache, tolerances).c
            jac[:, j] = (cp - cm) / (2 * h2)
        step = np.linalg.solve(jac, -result.c)
        if np.linalg.norm(step) > h2:
            step *= h2 / np.linalg.norm(step)
        trial = reduce_at(mask, gs, x + step, params, cache, tolerances)
        if trial.max_abs_c >= result.max_abs_c:
            break
        result = trial
    return result


def optimize_xi(
    mask: DomainMask,
    gs: GroundState,
    params: ModelParams | None = None,
    delta: float = 0.5,
    stride: int | None = None,
    cache: ReductionCache | None = None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    coarse_points: int = 40,
    polish_steps: int = 4,
) -> ReductionResult:
    """Minimize ``J_ε`` over ``Ω_{ε,δ}``.

    A coarse lattice scan (``stride`` chosen to give at most
    ``coarse_points`` candidates when omitted) seeds a Nelder-Mead search
    with ``xatol = h/4``.  A few Newton steps on ``c(ξ) = 0`` then polish the
    multipliers, accepted only while ``|c|`` decreases.  The minimizer must
    lie more than ``h`` inside ``Ω_{ε,δ}``.
    """
    params = mask.params if params is None else params
    cache = ReductionCache() if cache is None else cache
    h = mask.grid.spacing
    level = delta / mask.eps
    if stride is None:
        stride = _auto_stride(mask, delta, coarse_points)
    interior, _ = landscape_points(mask, delta, stride)

    def objective(x):
        if mask.distance_to_boundary(x) <= level:
            return math.inf
        try:
            return reduced_J(mask, gs, x, params, cache, tolerances)
        except (ContractionFailureError, SolverDivergenceError, GeometryError) as exc:
            log.info("reduction failed at ξ=%s: %s", tuple(x), exc)
            return math.inf

    values = [objective(x) for x in interior]
    if not np.isfinite(np.min(values)):
        raise ContractionFailureError(f"no coarse candidate contracted at ε={params.eps}; try a smaller ε", [])
    start = interior[int(np.argmin(values))]

    simplex = [start] + [start + stride * h * e for e in np.eye(len(start))]
    opt = minimize(
        objective, start, method="Nelder-Mead",
        options={"xatol": h / 4, "fatol": math.inf, "initial_simplex": np.array(simplex), "maxiter": 400},
    )
    best = reduce_at(mask, gs, opt.x, params, cache, tolerances)
    if polish_steps:
        best = _polish_multipliers(mask, gs, params, best, cache, tolerances, polish_steps)
    margin = mask.distance_to_boundary(best.xi) - level
    if margin <= h:
        raise BoundaryMinimumError(
            f"minimizer {best.xi} lies on the collar of Ω_(ε,δ) (margin {margin:.3g}); try a smaller δ or ε"
        )
    log.info("optimize_xi: ξ=%s, J=%.12f, max|c|=%.2e, %d reductions", best.xi, best.J_eps, best.max_abs_c, len(cache))
    return best


# ---------------------------------------------------------------------------
# assembly and verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VerificationReport:
    xi: tuple[float, ...]
    eps: float
    sup_error: float  # sup over Ω_ε of |u - w_ξ|
    true_residual: float  # interior sup of P u - u_+^p with c dropped, relative
    max_abs_c: float
    alpha: float
    M: np.ndarray
    M_defect: float  # max |M + α I| / α
    dv_dxi_sup: float
    min_interior_u: float
    center_offset: float  # |ξ - centre of Ω_ε|
    grid_spacing: float
    checks: dict

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def as_dict(self) -> dict:
        return {
            "xi": list(self.xi), "eps": self.eps, "sup_error": self.sup_error,
            "true_residual": self.true_residual, "max_abs_c": self.max_abs_c, "alpha": self.alpha,
            "M": self.M.tolist(), "M_defect": self.M_defect, "dv_dxi_sup": self.dv_dxi_sup,
            "min_interior_u": self.min_interior_u, "center_offset": self.center_offset,
            "grid_spacing": self.grid_spacing, "checks": dict(self.checks),
        }


def physical_field(field: ScalarField, eps: float) -> ScalarField:
    """``u_ε(x) = ũ(x/ε)``: same samples on the box scaled by ``ε``."""
    from .spectral_core import GridSpec

    g = field.grid
    return ScalarField(GridSpec(g.dim, g.half_width * eps, g.points_per_axis), field.values)


def assemble_and_verify(
    result: ReductionResult,
    params: ModelParams,
    gs: GroundState,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    cache: ReductionCache | None = None,
) -> VerificationReport:
    """Measure the assembled solution ``u = ū_ξ + Ψ(ξ)`` against ``w_ξ`` and the true equation.

    ``M_ji = ∫ Z_i ∂u_ξ/∂ξ_j`` and ``∂v_ξ/∂ξ`` use central differences in
    ``ξ`` with step ``2h``, re-running the contraction.
    """
    mask = result.mask
    if mask is None:
        raise ValueError("result carries no mask; produce it with contract_psi")
    inside = mask.inside
    grid = mask.grid
    u = result.u_eps_rescaled
    sup_error = float(np.max(np.abs((u - result.w_xi).values[inside])))
    sym = params.symbol()
    up = u.positive_power(params.p).values
    r = apply_multiplier(u, sym).values - up
    true_residual = float(np.max(np.abs(r[inside])) / np.max(up))

    n = params.dim
    h2 = 2.0 * grid.spacing
    x = np.asarray(result.xi)
    modes = [np.where(inside, translate(z, x).values, 0.0) for z in gs.modes]
    M = np.empty((n, n))
    dv_sup = 0.0
    for j in range(n):
        e = np.zeros(n)
        e[j] = h2
        rp = reduce_at(mask, gs, x + e, params, cache, tolerances)
        rm = reduce_at(mask, gs, x - e, params, cache, tolerances)
        du = (rp.u_eps_rescaled.values - rm.u_eps_rescaled.values) / (2 * h2)
        for i in range(n):
            M[j, i] = float(np.sum(modes[i] * du)) * grid.cell_volume
        vp = rp.w_xi.values - rp.ubar.values
        vm = rm.w_xi.values - rm.ubar.values
        dv_sup = max(dv_sup, float(np.max(np.abs(vp - vm))) / (2 * h2))
    alpha = gs.alpha
    M_defect = float(np.max(np.abs(M + alpha * np.eye(n)))) / alpha
    min_u = float(np.min(u.values[inside]))
    offset = float(np.linalg.norm(x - mask.center))
    checks = {
        "multipliers_small": result.max_abs_c <= tolerances.multiplier * alpha,
        "true_residual": true_residual <= 10 * tolerances.multiplier,
        "positive": min_u > 0,
        "M_near_minus_alpha": M_defect <= 0.1,
    }
    return VerificationReport(
        xi=result.xi, eps=params.eps, sup_error=sup_error, true_residual=true_residual,
        max_abs_c=result.max_abs_c, alpha=alpha, M=M, M_defect=M_defect, dv_dxi_sup=dv_sup,
        min_interior_u=min_u, center_offset=offset, grid_spacing=grid.spacing, checks=checks,
    )


def eps_slope(eps, values) -> float:
    """Log-log slope ``q`` of ``values ~ ε^q``."""
    from .spectral_core import fit_power_law

    return -fit_power_law(np.asarray(eps, float), np.abs(np.asarray(values, float))).exponent
