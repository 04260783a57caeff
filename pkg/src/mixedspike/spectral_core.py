"""Periodic-box spectral substrate.

Everything else in the package lives on a uniform cell-centred tensor grid
over ``[-L, L]^n``.  Operators of the form ``a|k|^2 + b|k|^{2s} + c`` are
applied and inverted as Fourier multipliers, integrals use the midpoint
rule, and linear systems that are not diagonal in Fourier space go through
:func:`krylov_solve`.
"""

from __future__ import annotations

import csv
import functools
import math
import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.fft as sfft
from scipy.sparse.linalg import LinearOperator, cg, gmres, minres

from .errors import (
    FieldFormatError,
    GeometryError,
    GridMismatchError,
    InsufficientDataError,
    InvalidFieldError,
    SingularSymbolError,
    SolverDivergenceError,
    UnsupportedVersionError,
)

_WORKERS = 1


def set_threads(n: int) -> None:
    """Number of threads used by the FFTs (results do not depend on it)."""
    global _WORKERS
    _WORKERS = max(1, int(n))


# ---------------------------------------------------------------------------
# grids and fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid of ``N`` cells per axis on the box ``[-L, L]^dim``.

    Samples sit at cell centres ``x_j = -L + (j + 1/2) h`` with ``h = 2L/N``.
    """

    dim: int
    half_width: float
    points_per_axis: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        n = self.points_per_axis
        if n < 16 or n & (n - 1):
            raise ValueError(f"points_per_axis must be a power of two >= 16, got {n}")
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")
        object.__setattr__(self, "half_width", float(self.half_width))

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.points_per_axis

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def center_cell(self) -> np.ndarray:
        """Coordinates of cell ``(N/2, ..., N/2)``, the cell just above the origin."""
        return np.full(self.dim, 0.5 * self.spacing)

    def axis(self) -> np.ndarray:
        return _axis(self)

    def coords(self) -> tuple[np.ndarray, ...]:
        """Broadcastable coordinate arrays, one per axis."""
        return _coords(self)

    def radius(self, center: Sequence[float] | None = None) -> np.ndarray:
        center = np.zeros(self.dim) if center is None else np.asarray(center, float)
        r2 = np.zeros(self.shape)
        for x, c in zip(self.coords(), center):
            r2 = r2 + (x - c) ** 2
        return np.sqrt(r2)

    def check_point(self, point: Sequence[float], margin: float = 0.0) -> np.ndarray:
        pt = np.asarray(point, dtype=float).reshape(-1)
        if pt.shape != (self.dim,):
            raise GeometryError(f"point {point!r} does not have dimension {self.dim}")
        if np.max(np.abs(pt)) > self.half_width - margin:
            raise GeometryError(
                f"point {pt.tolist()} is not inside the box with margin {margin} "
                f"(half width {self.half_width})"
            )
        return pt


@functools.lru_cache(maxsize=32)
def _axis(grid: GridSpec) -> np.ndarray:
    h = grid.spacing
    return -grid.half_width + (np.arange(grid.points_per_axis) + 0.5) * h


@functools.lru_cache(maxsize=32)
def _coords(grid: GridSpec) -> tuple[np.ndarray, ...]:
    ax = _axis(grid)
    out = []
    for d in range(grid.dim):
        shape = [1] * grid.dim
        shape[d] = grid.points_per_axis
        a = ax.reshape(shape)
        a.setflags(write=False)
        out.append(a)
    return tuple(out)


@functools.lru_cache(maxsize=32)
def _wavenumbers(grid: GridSpec) -> tuple[np.ndarray, ...]:
    """Per-axis wavenumbers in the ``rfftn`` layout (last axis halved)."""
    n, h = grid.points_per_axis, grid.spacing
    out = []
    for d in range(grid.dim):
        if d == grid.dim - 1:
            k = 2.0 * np.pi * np.fft.rfftfreq(n, d=h)
        else:
            k = 2.0 * np.pi * np.fft.fftfreq(n, d=h)
        shape = [1] * grid.dim
        shape[d] = k.size
        k = k.reshape(shape)
        k.setflags(write=False)
        out.append(k)
    return tuple(out)


@functools.lru_cache(maxsize=32)
def _kabs(grid: GridSpec) -> np.ndarray:
    k2 = sum(k**2 for k in _wavenumbers(grid))
    kk = np.sqrt(k2)
    kk.setflags(write=False)
    return kk


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real samples of a function on ``grid`` (array of shape ``grid.shape``)."""

    grid: GridSpec
    values: np.ndarray = dc_field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.size != self.grid.points_per_axis**self.grid.dim:
            raise InvalidFieldError(
                f"expected {self.grid.points_per_axis ** self.grid.dim} values, got {v.size}"
            )
        v = v.reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise InvalidFieldError("field contains NaN or Inf")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    # construction helpers
    @classmethod
    def zeros(cls, grid: GridSpec) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def constant(cls, grid: GridSpec, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid: GridSpec, fn: Callable[..., np.ndarray]) -> "ScalarField":
        """Sample ``fn(x1, ..., xn)`` (broadcasting coordinate arrays)."""
        vals = np.broadcast_to(fn(*grid.coords()), grid.shape)
        return cls(grid, vals)

    @classmethod
    def from_radial(cls, grid: GridSpec, fn: Callable[[np.ndarray], np.ndarray], center=None) -> "ScalarField":
        return cls(grid, fn(grid.radius(center)))

    @classmethod
    def delta(cls, grid: GridSpec) -> "ScalarField":
        """Discrete delta: ``1/h^n`` on the centre cell (see ``GridSpec.center_cell``)."""
        v = np.zeros(grid.shape)
        v[(grid.points_per_axis // 2,) * grid.dim] = 1.0 / grid.cell_volume
        return cls(grid, v)

    # arithmetic
    def _other(self, other):
        if isinstance(other, ScalarField):
            if other.grid != self.grid:
                raise GridMismatchError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return ScalarField(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return ScalarField(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return ScalarField(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return ScalarField(self.grid, self.values / self._other(other))

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "ScalarField":
        return ScalarField(self.grid, fn(self.values))

    def positive_power(self, p: float) -> "ScalarField":
        """``max(f, 0)**p``."""
        return ScalarField(self.grid, np.maximum(self.values, 0.0) ** p)

    def norm_l2(self) -> float:
        return math.sqrt(self.grid.cell_volume * float(np.sum(self.values**2)))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def dot(self, other: "ScalarField") -> float:
        return integrate(self * other)

    def at(self, index: Sequence[int]) -> float:
        return float(self.values[tuple(index)])


def same_grid(*fields: ScalarField) -> GridSpec:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise GridMismatchError("fields live on different grids")
    return grid


# ---------------------------------------------------------------------------
# Fourier multipliers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SymbolSpec:
    """Multiplier ``m(k) = a|k|^2 + b|k|^{2s} + c``."""

    s: float
    local_coeff: float = 1.0
    nonlocal_coeff: float = 1.0
    mass: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.s < 1.0:
            raise ValueError(f"s must lie in (0, 1), got {self.s}")
        # nonlocal_coeff may be negative only for deliberate fault injection
        if self.local_coeff < 0 or self.mass < 0:
            raise ValueError("local_coeff and mass must be nonnegative")

    def __call__(self, k: np.ndarray) -> np.ndarray:
        k = np.asarray(k, dtype=float)
        return self.local_coeff * k**2 + self.nonlocal_coeff * k ** (2 * self.s) + self.mass

    @classmethod
    def mixed(cls, s: float, mass: float = 1.0) -> "SymbolSpec":
        """The operator ``-Delta + (-Delta)^s + mass``."""
        return cls(s=s, local_coeff=1.0, nonlocal_coeff=1.0, mass=mass)


@functools.lru_cache(maxsize=64)
def _symbol_on_grid(grid: GridSpec, sym: SymbolSpec) -> np.ndarray:
    m = sym(_kabs(grid))
    m.setflags(write=False)
    return m


def _rfft(v: np.ndarray) -> np.ndarray:
    return sfft.rfftn(v, workers=_WORKERS)


def _irfft(vh: np.ndarray, shape) -> np.ndarray:
    return sfft.irfftn(vh, s=shape, workers=_WORKERS)


def multiply_array(values: np.ndarray, grid: GridSpec, sym: SymbolSpec, inverse: bool = False) -> np.ndarray:
    """Raw-array version of :func:`apply_multiplier` / :func:`solve_multiplier`."""
    m = _symbol_on_grid(grid, sym)
    vh = _rfft(values)
    if inverse:
        vh /= m
    else:
        vh *= m
    return _irfft(vh, grid.shape)


def apply_multiplier(field: ScalarField, sym: SymbolSpec) -> ScalarField:
    """Apply ``a(-Delta) + b(-Delta)^s + c`` spectrally on the periodic box."""
    if not np.all(np.isfinite(field.values)):
        raise InvalidFieldError("field contains NaN or Inf")
    return ScalarField(field.grid, multiply_array(field.values, field.grid, sym))


def solve_multiplier(rhs: ScalarField, sym: SymbolSpec) -> ScalarField:
    """Invert the multiplier: divide Fourier coefficients by ``m(k)``."""
    if not sym.mass > 0:
        raise SingularSymbolError("multiplier vanishes at k = 0 (mass must be > 0)")
    m = _symbol_on_grid(rhs.grid, sym)
    if np.any(m <= 0):
        raise SingularSymbolError("multiplier is not positive on the grid")
    return ScalarField(rhs.grid, multiply_array(rhs.values, rhs.grid, sym, inverse=True))


def lowpass(field: ScalarField, fraction: float = 0.7, order: int = 8) -> ScalarField:
    """Damp modes near the grid cutoff with ``exp(-(|k| / (fraction k_N))^order)``.

    The filter equals 1 at ``k = 0``, so integrals are unchanged.
    """
    grid = field.grid
    k_nyq = np.pi / grid.spacing
    filt = np.exp(-((_kabs(grid) / (fraction * k_nyq)) ** order))
    vh = _rfft(field.values) * filt
    return ScalarField(grid, _irfft(vh, grid.shape))


def spectral_derivative(field: ScalarField, axis: int) -> ScalarField:
    """``d/dx_axis`` by multiplication with ``i k`` (Nyquist mode dropped)."""
    grid = field.grid
    k = _wavenumbers(grid)[axis].copy()
    n = grid.points_per_axis
    if axis == grid.dim - 1:
        k[..., -1] = 0.0
    else:
        idx = [slice(None)] * grid.dim
        idx[axis] = n // 2
        k[tuple(idx)] = 0.0
    vh = _rfft(field.values) * (1j * k)
    return ScalarField(grid, _irfft(vh, grid.shape))


def phase_shift(values: np.ndarray, grid: GridSpec, shift: Sequence[float]) -> np.ndarray:
    """Band-limited translation ``f(x) -> f(x - shift)``."""
    ks = _wavenumbers(grid)
    phase = sum(k * float(a) for k, a in zip(ks, shift))
    vh = _rfft(values) * np.exp(-1j * phase)
    return _irfft(vh, grid.shape)


# ---------------------------------------------------------------------------
# quadrature and decay fits
# ---------------------------------------------------------------------------


def integrate(field: ScalarField) -> float:
    """Midpoint rule ``h^n * sum(values)`` (pairwise summation, fixed order)."""
    return field.grid.cell_volume * float(np.sum(field.values))


@dataclass(frozen=True)
class DecayFit:
    """Result of a log-log fit ``|f| ~ exp(intercept) * r**(-exponent)``."""

    exponent: float
    intercept: float
    r_inner: float
    r_outer: float
    residual: float
    bins: int = 0
    label: str = ""

    def __post_init__(self):
        if not self.r_inner < self.r_outer:
            raise ValueError("r_inner must be smaller than r_outer")
        if self.residual < 0:
            raise ValueError("residual must be nonnegative")

    def is_power_law(self, threshold: float = 0.05) -> bool:
        return self.residual <= threshold

    def as_dict(self) -> dict:
        return {
            "exponent": self.exponent,
            "intercept": self.intercept,
            "r_inner": self.r_inner,
            "r_outer": self.r_outer,
            "residual": self.residual,
            "bins": self.bins,
            "label": self.label,
        }


def radial_bins(field: ScalarField, center, r_inner: float, r_outer: float, nbins: int = 32):
    """Shell averages of ``|f|`` over bins equal-width in ``log r``.

    Returns ``(r, value)`` arrays (geometric-mean radius and arithmetic mean of
    ``|f|`` per bin), dropping empty bins.
    """
    grid = field.grid
    r = grid.radius(center)
    edges = np.geomspace(r_inner, r_outer, nbins + 1)
    sel = (r >= r_inner) & (r <= r_outer)
    rs = r[sel]
    fs = np.abs(field.values[sel])
    which = np.clip(np.searchsorted(edges, rs, side="right") - 1, 0, nbins - 1)
    counts = np.bincount(which, minlength=nbins)
    sum_logr = np.bincount(which, weights=np.log(rs), minlength=nbins)
    sum_f = np.bincount(which, weights=fs, minlength=nbins)
    ok = counts > 0
    return np.exp(sum_logr[ok] / counts[ok]), np.maximum(sum_f[ok] / counts[ok], 1e-300)


def fit_decay(field: ScalarField, center, r_inner: float, r_outer: float, nbins: int = 32) -> DecayFit:
    """Fit a power law to ``|field|`` on the annulus ``r_inner <= |x - center| <= r_outer``."""
    grid = field.grid
    c = np.asarray(center, dtype=float).reshape(-1)
    if not 0 < r_inner < r_outer:
        raise GeometryError("need 0 < r_inner < r_outer")
    if r_outer >= grid.half_width - float(np.max(np.abs(c))):
        raise GeometryError(
            f"annulus radius {r_outer} leaves the box (L={grid.half_width}, centre={c.tolist()})"
        )
    r, val = radial_bins(field, c, r_inner, r_outer, nbins)
    if r.size < 8:
        raise InsufficientDataError(f"only {r.size} nonempty radial bins (need 8)")
    return fit_power_law(r, val, r_inner, r_outer)


def fit_power_law(r, values, r_inner: float | None = None, r_outer: float | None = None) -> DecayFit:
    """Least-squares slope of ``log|values|`` against ``log r``."""
    r = np.asarray(r, dtype=float)
    values = np.asarray(values, dtype=float)
    if r.size < 2:
        raise InsufficientDataError("need at least two points for a power-law fit")
    x, y = np.log(r), np.log(np.maximum(np.abs(values), 1e-300))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    return DecayFit(
        exponent=float(-slope),
        intercept=float(intercept),
        r_inner=float(r.min() if r_inner is None else r_inner),
        r_outer=float(r.max() if r_outer is None else r_outer),
        residual=float(np.sqrt(np.mean(resid**2))),
        bins=int(r.size),
    )


def write_profile_csv(path, r, values) -> None:
    """Radial profile as CSV with header ``r,value``."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["r", "value"])
        for a, b in zip(np.asarray(r).ravel(), np.asarray(values).ravel()):
            wr.writerow([repr(float(a)), repr(float(b))])


# ---------------------------------------------------------------------------
# Krylov solves
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KrylovResult:
    solution: np.ndarray
    iterations: int
    residual: float  # ||A x - b|| / ||b||


def krylov_vector_solve(
    matvec: Callable[[np.ndarray], np.ndarray],
    rhs: np.ndarray,
    tol: float,
    max_iter: int,
    *,
    precond: Callable[[np.ndarray], np.ndarray] | None = None,
    method: str = "cg",
    x0: np.ndarray | None = None,
    restarts: int = 4,
) -> KrylovResult:
    """Solve ``A x = b`` for flat vectors with CG, MINRES or restarted GMRES.

    The true residual is recomputed after each outer pass; if the inner
    method stopped on its own (preconditioned) estimate before the true
    relative residual reached ``tol``, the solve is restarted from the
    current iterate.
    """
    b = np.asarray(rhs, dtype=float).ravel()
    size = b.size
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return KrylovResult(np.zeros(size), 0, 0.0)
    A = LinearOperator((size, size), matvec=lambda v: np.asarray(matvec(v), float).ravel(), dtype=float)
    M = None
    if precond is not None:
        M = LinearOperator((size, size), matvec=lambda v: np.asarray(precond(v), float).ravel(), dtype=float)
    x = np.zeros(size) if x0 is None else np.asarray(x0, float).ravel().copy()
    count = [0]

    def cb(*_):
        count[0] += 1

    r = b - A.matvec(x)
    res = float(np.linalg.norm(r)) / bnorm
    for _ in range(restarts + 1):
        if res <= tol:
            break
        remaining = max_iter - count[0]
        if remaining <= 0:
            break
        # restart on the correction equation A dx = r so each pass starts fresh;
        # each pass must gain two digits, since the inner (preconditioned)
        # estimate can stop short of the true residual
        inner_tol = min(1e-2, 0.1 * tol / res)
        if method == "cg":
            dx, _info = cg(A, r, rtol=inner_tol, atol=0.0, maxiter=remaining, M=M, callback=cb)
        elif method == "minres":
            dx, _info = minres(A, r, rtol=inner_tol, maxiter=remaining, M=M, callback=cb)
        elif method == "gmres":
            restart = min(60, remaining)
            dx, _info = gmres(
                A, r, rtol=inner_tol, atol=0.0, restart=restart,
                maxiter=max(1, remaining // restart), M=M, callback=cb, callback_type="pr_norm",
            )
        else:
            raise ValueError(f"unknown Krylov method {method!r}")
        x = x + dx
        r = b - A.matvec(x)
        res = float(np.linalg.norm(r)) / bnorm
    if not res <= tol:
        raise SolverDivergenceError(f"{method} did not converge to {tol:.1e}", res, count[0])
    return KrylovResult(x, count[0], res)


def krylov_solve(
    op: Callable[[ScalarField], ScalarField],
    rhs: ScalarField,
    tol: float = 1e-10,
    max_iter: int = 2000,
    *,
    precond: Callable[[ScalarField], ScalarField] | None = None,
    method: str = "cg",
) -> tuple[ScalarField, KrylovResult]:
    """Matrix-free solve of ``op(x) = rhs`` for fields on one grid.

    Returns the solution field together with iteration count and final
    relative residual.  CG is the default (symmetric positive operators);
    ``method="minres"`` handles symmetric indefinite ones and
    ``method="gmres"`` nonsymmetric ones.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    grid = rhs.grid

    def mv(v):
        return op(ScalarField(grid, v.reshape(grid.shape))).values.ravel()

    pc = None
    if precond is not None:
        def pc(v):
            return precond(ScalarField(grid, v.reshape(grid.shape))).values.ravel()

    out = krylov_vector_solve(mv, rhs.values, tol, max_iter, precond=pc, method=method)
    return ScalarField(grid, out.solution.reshape(grid.shape)), out


# ---------------------------------------------------------------------------
# field files
# ---------------------------------------------------------------------------

MAGIC = b"MLNF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIB3xQd")


def write_field(field: ScalarField, path) -> None:
    """Binary little-endian field file (see README for the layout)."""
    g = field.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, g.dim, g.points_per_axis, g.half_width))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_field(path) -> ScalarField:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FieldFormatError("file shorter than header")
    magic, version, dim, n, half_width = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FieldFormatError(f"bad magic {magic!r}")
    if version > FORMAT_VERSION:
        raise UnsupportedVersionError(f"field format version {version} > supported {FORMAT_VERSION}")
    if dim not in (1, 2, 3):
        raise FieldFormatError(f"unsupported dimension {dim}")
    try:
        grid = GridSpec(dim, half_width, int(n))
    except ValueError as exc:
        raise FieldFormatError(str(exc)) from exc
    count = int(n) ** dim
    payload = data[_HEADER.size:]
    if len(payload) != 8 * count:
        raise FieldFormatError(f"payload has {len(payload)} bytes, expected {8 * count}")
    vals = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    try:
        return ScalarField(grid, vals.reshape(grid.shape))
    except Exception as exc:
        raise FieldFormatError(str(exc)) from exc
