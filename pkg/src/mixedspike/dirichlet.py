"""Bounded domains and the exterior Dirichlet problem.

The nonlocal operator needs ``u = 0`` on the whole complement of ``Ω_ε``,
not only on its boundary.  Solves therefore run on the full periodic grid:
interior rows carry the operator, exterior rows are the identity with zero
right-hand side, so exterior values stay exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .config import DEFAULT_TOLERANCES
from .errors import GeometryError, GridMismatchError
from .spectral_core import (
    GridSpec,
    ScalarField,
    krylov_vector_solve,
    multiply_array,
    phase_shift,
    same_grid,
)
from .whole_space import ModelParams

SHAPES = ("ball", "ellipse", "rounded_rectangle")


@dataclass(frozen=True)
class DomainSpec:
    """A smooth bounded domain ``Ω`` in physical (unscaled) coordinates.

    Use the constructors :meth:`ball`, :meth:`ellipse` and
    :meth:`rounded_rectangle`.
    """

    shape: str
    center: tuple[float, ...]
    radius: float = 0.0
    semi_axes: tuple[float, ...] = ()
    half_widths: tuple[float, ...] = ()
    corner_radius: float = 0.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.shape == "ball" and not self.radius > 0:
            raise ValueError("ball radius must be positive")
        if self.shape == "ellipse":
            if len(self.semi_axes) != 2 or min(self.semi_axes) <= 0:
                raise ValueError("ellipse needs two positive semi-axes (dimension 2)")
            if len(self.center) != 2:
                raise ValueError("ellipse is two-dimensional")
        if self.shape == "rounded_rectangle":
            if len(self.half_widths) != len(self.center):
                raise ValueError("half_widths must match the dimension")
            if not 0 < self.corner_radius <= min(self.half_widths):
                raise ValueError("corner radius must be positive (C^2 boundary) and at most the half width")

    @classmethod
    def ball(cls, radius: float, center=(0.0, 0.0)) -> "DomainSpec":
        return cls("ball", tuple(center), radius=float(radius))

    @classmethod
    def ellipse(cls, semi_axes, center=(0.0, 0.0)) -> "DomainSpec":
        return cls("ellipse", tuple(center), semi_axes=tuple(float(a) for a in semi_axes))

    @classmethod
    def rounded_rectangle(cls, half_widths, corner_radius: float, center=(0.0, 0.0)) -> "DomainSpec":
        return cls("rounded_rectangle", tuple(center), half_widths=tuple(float(a) for a in half_widths),
                   corner_radius=float(corner_radius))

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def extent(self) -> np.ndarray:
        """Half-widths of the axis-aligned bounding box."""
        if self.shape == "ball":
            return np.full(self.dim, self.radius)
        if self.shape == "ellipse":
            return np.array(self.semi_axes)
        return np.array(self.half_widths)

    @property
    def max_inner_distance(self) -> float:
        """``d_0 = max_{x in Ω} dist(x, ∂Ω)`` (attained at the centre for these shapes)."""
        if self.shape == "ball":
            return self.radius
        if self.shape == "ellipse":
            return min(self.semi_axes)
        return min(self.half_widths)

    def signed_distance(self, *coords: np.ndarray) -> np.ndarray:
        """Distance to ``∂Ω``, positive inside, at broadcastable coordinates."""
        rel = [np.asarray(x, float) - c for x, c in zip(coords, self.center)]
        if self.shape == "ball":
            return self.radius - np.sqrt(sum(r**2 for r in rel))
        if self.shape == "rounded_rectangle":
            q = [np.abs(r) - (hw - self.corner_radius) for r, hw in zip(rel, self.half_widths)]
            outer = np.sqrt(sum(np.maximum(qi, 0.0) ** 2 for qi in q))
            inner = np.minimum(np.maximum.reduce(np.broadcast_arrays(*q)), 0.0)
            return -(outer + inner - self.corner_radius)
        return _ellipse_signed_distance(self.semi_axes, rel[0], rel[1])

    def as_dict(self) -> dict:
        d = {"shape": self.shape, "center": list(self.center)}
        if self.shape == "ball":
            d["radius"] = self.radius
        elif self.shape == "ellipse":
            d["semi_axes"] = list(self.semi_axes)
        else:
            d["half_widths"] = list(self.half_widths)
            d["corner_radius"] = self.corner_radius
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        shape = d["shape"]
        center = tuple(d.get("center", (0.0, 0.0)))
        if shape == "ball":
            return cls.ball(d["radius"], center)
        if shape == "ellipse":
            return cls.ellipse(d["semi_axes"], center)
        if shape == "rounded_rectangle":
            return cls.rounded_rectangle(d["half_widths"], d["corner_radius"], center)
        raise ValueError(f"unknown shape {shape!r}")


def _ellipse_signed_distance(axes, x, y, iterations: int = 96):
    """Signed distance to the ellipse ``(x/a)^2 + (y/b)^2 = 1`` (positive inside).

    Bisection on the Lagrange-multiplier equation for the closest point,
    following Eberly's robust formulation; vectorized over points.
    """
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    a, b = axes
    swap = a < b
    e0, e1 = (b, a) if swap else (a, b)
    y0, y1 = (np.abs(y), np.abs(x)) if swap else (np.abs(x), np.abs(y))
    inside = (y0 / e0) ** 2 + (y1 / e1) ** 2 < 1.0

    dist = np.empty(x.shape)
    gen = (y1 > 0) & (y0 > 0)
    # generic quadrant points
    z0 = y0[gen] / e0
    z1 = y1[gen] / e1
    g = z0**2 + z1**2 - 1.0
    r0 = (e0 / e1) ** 2
    n0 = r0 * z0
    s0 = z1 - 1.0
    s1 = np.where(g < 0, 0.0, np.hypot(n0, z1) - 1.0)
    for _ in range(iterations):
        sm = 0.5 * (s0 + s1)
        gm = (n0 / (sm + r0)) ** 2 + (z1 / (sm + 1.0)) ** 2 - 1.0
        pos = gm > 0
        s0 = np.where(pos, sm, s0)
        s1 = np.where(pos, s1, sm)
    sbar = 0.5 * (s0 + s1)
    x0 = r0 * y0[gen] / (sbar + r0)
    x1 = y1[gen] / (sbar + 1.0)
    dist[gen] = np.hypot(x0 - y0[gen], x1 - y1[gen])
    # on the minor axis line (y0 == 0)
    m = (y0 == 0) & (y1 > 0)
    dist[m] = np.abs(y1[m] - e1)
    # on the major axis line (y1 == 0)
    m = y1 == 0
    numer = e0 * y0[m]
    denom = e0**2 - e1**2
    on_evolute = numer < denom
    xde = np.where(on_evolute, numer / denom if denom > 0 else 0.0, 1.0)
    px = e0 * xde
    py = e1 * np.sqrt(np.maximum(1.0 - xde**2, 0.0))
    dist[m] = np.where(on_evolute, np.hypot(px - y0[m], py), np.abs(y0[m] - e0))
    return np.where(inside, dist, -dist)


@dataclass(frozen=True, eq=False)
class DomainMask:
    """``Ω_ε = Ω/ε`` sampled on a grid.

    ``inside[j]`` holds exactly when ``signed_distance[j] > 0``; cells on
    the boundary count as exterior.
    """

    grid: GridSpec
    inside: np.ndarray = dc_field(repr=False)
    signed_distance: ScalarField = dc_field(repr=False)
    eps: float
    domain: DomainSpec
    params: ModelParams

    @property
    def indicator(self) -> ScalarField:
        return ScalarField(self.grid, self.inside.astype(float))

    @property
    def exterior_indicator(self) -> ScalarField:
        return ScalarField(self.grid, (~self.inside).astype(float))

    @property
    def max_distance(self) -> float:
        """``d_0 / ε``, the largest distance to ``∂Ω_ε`` any point can have."""
        return self.domain.max_inner_distance / self.eps

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.domain.center) / self.eps

    def distance_to_boundary(self, point) -> float:
        """Exact signed distance of a rescaled point to ``∂Ω_ε``."""
        pt = np.asarray(point, float).reshape(-1)
        phys = [np.asarray(self.eps * c) for c in pt]
        return float(self.domain.signed_distance(*phys)) / self.eps

    def restrict(self, field: ScalarField) -> ScalarField:
        """Zero outside ``Ω_ε``."""
        if field.grid != self.grid:
            raise GridMismatchError("field and mask live on different grids")
        return ScalarField(self.grid, np.where(self.inside, field.values, 0.0))


def make_mask(domain: DomainSpec, params: ModelParams, grid: GridSpec, margin: float = 2.0) -> DomainMask:
    """Classify cell centres against ``Ω/ε``; fails if the scaled domain leaves the box."""
    if domain.dim != grid.dim:
        raise GeometryError("domain and grid dimensions differ")
    eps = params.eps
    reach = (np.abs(np.asarray(domain.center)) + domain.extent) / eps
    if np.max(reach) > grid.half_width - margin:
        raise GeometryError(
            f"Ω/ε reaches {np.max(reach):.3g} but the box half-width is {grid.half_width} "
            f"(margin {margin}); use a larger L or a larger ε"
        )
    coords = [eps * x for x in grid.coords()]
    sd = np.broadcast_to(domain.signed_distance(*coords) / eps, grid.shape)
    inside = sd > 0.0
    inside.setflags(write=False)
    return DomainMask(grid, inside, ScalarField(grid, sd), eps, domain, params)


# ---------------------------------------------------------------------------
# masked solves
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DirichletSolve:
    solution: ScalarField
    residual: float
    iterations: int
    rayleigh_quotient: float = math.nan
    indefinite: bool = False

    def report(self, mask: DomainMask) -> dict:
        vals = self.solution.values[mask.inside]
        return {
            "residual": self.residual,
            "iterations": self.iterations,
            "min_interior_value": float(vals.min()) if vals.size else float("nan"),
        }


class MaskedOperator:
    """``M (P - V) M + (I - M)`` and its preconditioner ``M P^{-1} M + (I - M)``."""

    def __init__(self, mask: DomainMask, potential: ScalarField | None = None):
        self.mask = mask
        self.grid = mask.grid
        self.sym = mask.params.symbol()
        self.inside = mask.inside
        self.outside = ~mask.inside
        self.potential = None if potential is None else potential.values

    def apply(self, v: np.ndarray) -> np.ndarray:
        x = v.reshape(self.grid.shape)
        xi = np.where(self.inside, x, 0.0)
        y = multiply_array(xi, self.grid, self.sym)
        if self.potential is not None:
            y = y - self.potential * xi
        return np.where(self.inside, y, x).ravel()

    def precondition(self, v: np.ndarray) -> np.ndarray:
        x = v.reshape(self.grid.shape)
        xi = np.where(self.inside, x, 0.0)
        y = multiply_array(xi, self.grid, self.sym, inverse=True)
        return np.where(self.inside, y, x).ravel()


def solve_dirichlet(
    rhs: ScalarField,
    mask: DomainMask,
    potential: ScalarField | None = None,
    tol: float = DEFAULT_TOLERANCES.solver,
    max_iter: int = 4000,
    check_positivity: bool = False,
) -> DirichletSolve:
    """Solve ``(-Δ + (-Δ)^s + 1 - V) u = rhs`` in ``Ω_ε`` with ``u = 0`` outside.

    Without a potential the masked operator is symmetric positive definite
    and preconditioned CG is used; with one, MINRES.  ``check_positivity``
    asserts the discrete maximum principle for nonnegative data.
    """
    same_grid(rhs, mask.signed_distance)
    op = MaskedOperator(mask, potential)
    b = np.where(mask.inside, rhs.values, 0.0)
    method = "cg" if potential is None else "minres"
    out = krylov_vector_solve(op.apply, b, tol, max_iter, precond=op.precondition, method=method)
    u = np.where(mask.inside, out.solution.reshape(mask.grid.shape), 0.0)
    rq = math.nan
    indefinite = False
    if potential is not None and np.any(u):
        rq = float(np.vdot(u.ravel(), op.apply(u.ravel())))
        indefinite = rq < 0
    sol = DirichletSolve(ScalarField(mask.grid, u), out.residual, out.iterations, rq, indefinite)
    if check_positivity and potential is None:
        if np.all(b >= 0) and np.any(b > 0) and not np.all(u[mask.inside] > 0):
            raise AssertionError(
                f"maximum principle violated: min interior value {u[mask.inside].min():.3e}"
            )
    return sol


# ---------------------------------------------------------------------------
# barrier and deficiency
# ---------------------------------------------------------------------------


def barrier_h(mask: DomainMask, xi, K: ScalarField) -> ScalarField:
    """``h_ξ(x) = ∫_{R^n \\ Ω_ε} K(x - z) K(ξ - z) dz`` by two spectral passes.

    ``K`` must be the fundamental solution of the mask's operator, centred
    on ``grid.center_cell`` (as returned by ``fundamental_solution``).
    """
    grid = same_grid(K, mask.signed_distance)
    pt = grid.check_point(xi, margin=1.0)
    d = mask.distance_to_boundary(pt)
    if d < 1.0:
        raise GeometryError(f"ξ must have distance >= 1 from the boundary, got {d:.3g}")
    k_xi = phase_shift(K.values, grid, pt - grid.center_cell)
    src = np.where(mask.inside, 0.0, k_xi)
    return ScalarField(grid, multiply_array(src, grid, mask.params.symbol(), inverse=True))


def barrier_tail_estimate(mask: DomainMask, xi, k_constant: float) -> float:
    """Size of the part of ``h_ξ`` beyond the box, ``~ c_K^2 |S^{n-1}| R^{-(n+4s)} / (n+4s)``.

    ``R`` is the distance from ``ξ`` to the box faces and ``c_K`` the
    constant in ``K ~ c_K |x|^{-(n+2s)}``.  Reported, not added.
    """
    n, s = mask.params.dim, mask.params.s
    R = mask.grid.half_width - float(np.max(np.abs(np.asarray(xi, float))))
    sphere = 2 * math.pi ** (n / 2) / math.gamma(n / 2)
    a = n + 4 * s
    return k_constant**2 * sphere * R ** (-a) / a


def deficiency_v(w_xi: ScalarField, ubar: ScalarField) -> ScalarField:
    """``v_ξ = w_ξ - ū_ξ``."""
    return w_xi - ubar


def weighted_norm(field: ScalarField, xi, mu: float) -> float:
    """``max_x (1 + |x - ξ|)^μ |f(x)|``."""
    rho = (1.0 + field.grid.radius(np.asarray(xi, float))) ** mu
    return float(np.max(rho * np.abs(field.values)))
