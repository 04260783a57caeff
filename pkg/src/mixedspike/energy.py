"""Energy functionals on ``Ω_ε`` and the reduced-energy landscape ``H_ε(ξ)``."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .config import DEFAULT_TOLERANCES
from .dirichlet import DomainMask, deficiency_v, solve_dirichlet
from .errors import GeometryError, InsufficientDataError, InvalidFieldError
from .spectral_core import DecayFit, ScalarField, apply_multiplier, fit_power_law, integrate
from .whole_space import GroundState, ModelParams, translate

log = logging.getLogger(__name__)


def energy_I_eps(u: ScalarField, mask: DomainMask | None, params: ModelParams) -> float:
    """``½<u, (-Δ + (-Δ)^s + 1) u> - 1/(p+1) ∫_{Ω_ε} u_+^{p+1}``.

    The quadratic form is the Fourier one, so the fractional part carries
    the normalization of the symbol ``|k|^{2s}``; critical points of this
    functional solve the discrete equation exactly.  ``u`` must vanish on
    exterior cells; ``mask=None`` integrates over the whole box.
    """
    if mask is not None:
        if u.grid != mask.grid:
            raise InvalidFieldError("u and mask live on different grids")
        if np.any(u.values[~mask.inside] != 0.0):
            raise InvalidFieldError("u must vanish outside Ω_ε")
    quad = integrate(u * apply_multiplier(u, params.symbol()))
    return 0.5 * quad - integrate(u.positive_power(params.p + 1)) / (params.p + 1)


@dataclass(frozen=True)
class EnergyReport:
    """Energies at one concentration point ``ξ``.

    ``remainder = I_eps - I_w - H_eps / 2``.  ``A1`` is the exterior mass
    ``∫_{R^n \\ Ω_ε} w_ξ^{p+1}`` and ``A2 = ∫_{Ω_ε} (w_ξ^{p+1} - ū_ξ^{p+1})``;
    the remainder equals ``-(½ - 1/(p+1)) A1 + A2/(p+1) - H_eps`` exactly.
    """

    I_eps: float
    I_w: float
    H_eps: float
    remainder: float
    d: float
    eps: float
    A1: float = float("nan")
    A2: float = float("nan")
    I_eps_weak: float = float("nan")
    solve_iterations: int = 0
    p: float = 2.0

    @property
    def remainder_identity(self) -> float:
        """The remainder rebuilt from ``A1``, ``A2`` and ``H_eps``."""
        p = self.p
        return -(0.5 - 1.0 / (p + 1)) * self.A1 + self.A2 / (p + 1) - self.H_eps

    def as_dict(self) -> dict:
        return {
            "I_eps": self.I_eps, "I_w": self.I_w, "H_eps": self.H_eps,
            "remainder": self.remainder, "d": self.d, "eps": self.eps,
            "A1": self.A1, "A2": self.A2,
        }


def reduced_energy_H(
    mask: DomainMask,
    xi,
    gs: GroundState,
    tol: float = DEFAULT_TOLERANCES.solver,
    min_distance: float = 2.0,
) -> EnergyReport:
    """``H_ε(ξ) = ∫_{Ω_ε} w_ξ^p (w_ξ - ū_ξ)`` together with the full energy expansion."""
    params = mask.params
    p = params.p
    d = mask.distance_to_boundary(xi)
    if d < min_distance - 1e-9:
        raise GeometryError(f"dist(ξ, ∂Ω_ε) = {d:.3g} < {min_distance}")
    w_xi = translate(gs.w, xi)
    wp = w_xi.positive_power(p)
    sol = solve_dirichlet(wp, mask, tol=tol)
    ubar = sol.solution
    v = deficiency_v(w_xi, ubar)
    inside = mask.inside
    dv = mask.grid.cell_volume
    H = float(np.sum((wp.values * v.values)[inside]) * dv)
    I_eps = energy_I_eps(ubar, mask, params)
    wq = w_xi.positive_power(p + 1).values
    uq = ubar.positive_power(p + 1).values
    A1 = float(np.sum(wq[~inside]) * dv)
    A2 = float(np.sum((wq - uq)[inside]) * dv)
    weak = 0.5 * integrate(wp * ubar) - float(np.sum(uq) * dv) / (p + 1)
    return EnergyReport(
        I_eps=I_eps, I_w=gs.energy, H_eps=H, remainder=I_eps - gs.energy - 0.5 * H,
        d=d, eps=params.eps, A1=A1, A2=A2, I_eps_weak=weak,
        solve_iterations=sol.iterations, p=p,
    )


# ---------------------------------------------------------------------------
# landscape
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LandscapeSample:
    xi: tuple[float, ...]
    H_eps: float
    d: float
    collar: bool = False
    remainder: float = float("nan")
    J_eps: float | None = None


@dataclass(frozen=True)
class LandscapeScan:
    """``H_ε`` on a lattice of ``Ω_{ε,δ}`` plus a collar just outside it.

    ``fit`` is the power law of ``H_ε`` against ``d`` over interior samples
    with ``d`` in ``fit_range``.
    """

    samples: tuple[LandscapeSample, ...]
    fit: DecayFit | None
    delta: float
    eps: float
    stride: int
    fit_range: tuple[float, float]

    @property
    def interior(self) -> list[LandscapeSample]:
        return [s for s in self.samples if not s.collar]

    @property
    def collar(self) -> list[LandscapeSample]:
        return [s for s in self.samples if s.collar]

    @property
    def interior_min(self) -> float:
        return min(s.H_eps for s in self.interior)

    @property
    def collar_min(self) -> float:
        return min(s.H_eps for s in self.collar) if self.collar else float("nan")

    @property
    def minimizer(self) -> LandscapeSample:
        return min(self.interior, key=lambda s: s.H_eps)

    def summary(self) -> dict:
        best = self.minimizer
        return {
            "eps": self.eps, "delta": self.delta, "stride": self.stride,
            "n_interior": len(self.interior), "n_collar": len(self.collar),
            "interior_min": self.interior_min, "collar_min": self.collar_min,
            "minimizer": list(best.xi), "minimizer_d": best.d,
            "fit": None if self.fit is None else self.fit.as_dict(),
            "fit_range": list(self.fit_range),
        }

    def write_csv(self, path) -> None:
        n = len(self.samples[0].xi) if self.samples else 0
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow([f"xi_{i + 1}" for i in range(n)] + ["d", "H_eps", "J_eps", "remainder", "collar"])
            for s in self.samples:
                J = "" if s.J_eps is None else repr(s.J_eps)
                wr.writerow([repr(x) for x in s.xi] + [repr(s.d), repr(s.H_eps), J, repr(s.remainder), int(s.collar)])


def landscape_points(mask: DomainMask, delta: float, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Candidate ``ξ``: the stride lattice inside ``Ω_{ε,δ}`` and a one-cell collar of its boundary.

    Returns ``(interior, collar)`` as arrays of points.
    """
    if not 0 < delta < 1:
        raise GeometryError("delta must lie in (0, 1)")
    if stride < 1:
        raise InsufficientDataError("stride must be a positive integer")
    grid = mask.grid
    level = delta / mask.eps
    sd = mask.signed_distance.values
    idx = np.indices(grid.shape)
    centre = [int(np.argmin(np.abs(grid.axis() - c))) for c in mask.center]
    on_lattice = np.ones(grid.shape, bool)
    for ax in range(grid.dim):
        on_lattice &= (idx[ax] - centre[ax]) % stride == 0
    inner = (sd > level) & on_lattice
    band = (sd <= level) & (sd > level - grid.spacing)
    if not np.any(sd > level):
        raise GeometryError(f"Ω_(ε,δ) is empty: δ/ε = {level:.3g} exceeds the inner radius {sd.max():.3g}")
    width = 2.0 * (float(sd.max()) - level)
    if not np.any(inner) or stride * grid.spacing > width:
        raise InsufficientDataError(
            f"stride {stride}h = {stride * grid.spacing:.3g} exceeds the width {width:.3g} of Ω_(ε,δ)"
        )
    axis = grid.axis()
    pts = lambda m: np.stack([axis[i[m]] for i in idx], axis=-1)
    collar = pts(band)[::stride]
    return pts(inner), collar


def scan_landscape(
    mask: DomainMask,
    gs: GroundState,
    delta: float,
    stride: int,
    tol: float = DEFAULT_TOLERANCES.solver,
    fit_range: tuple[float, float] | None = None,
) -> LandscapeScan:
    """Evaluate ``H_ε`` over ``Ω_{ε,δ}`` (stride lattice) and its collar.

    The default fit range is ``d ∈ [2, 0.8 d_max]`` with ``d_max = d_0/ε``.
    """
    interior, collar = landscape_points(mask, delta, stride)
    samples = []
    for pts, is_collar in ((interior, False), (collar, True)):
        for xi in pts:
            rep = reduced_energy_H(mask, xi, gs, tol=tol, min_distance=min(2.0, delta / mask.eps - mask.grid.spacing))
            samples.append(LandscapeSample(tuple(float(x) for x in xi), rep.H_eps, rep.d, is_collar, rep.remainder))
    lo, hi = fit_range if fit_range is not None else (2.0, 0.8 * mask.max_distance)
    inside = [s for s in samples if not s.collar and lo <= s.d <= hi]
    fit = None
    if len(inside) >= 2:
        fit = fit_power_law([s.d for s in inside], [s.H_eps for s in inside], lo, hi)
    else:
        log.warning("only %d samples in the fit range [%g, %g]", len(inside), lo, hi)
    return LandscapeScan(tuple(samples), fit, delta, mask.eps, stride, (lo, hi))
