"""Numerical tolerances in one place.

Every solver and check reads its thresholds from a :class:`Tolerances`
instance; the defaults below are the ones the test and acceptance suites use.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

from .errors import ConfigError


@dataclass(frozen=True)
class Tolerances:
    solver: float = 1e-11  # relative Krylov residual for linear solves
    projected: float = 1e-10  # bordered solves sit closer to their round-off floor
    ground_state: float = 1e-8  # ||P w - w^p|| / ||w||
    contraction: float = 1e-9  # weighted-norm step size, relative to ||psi||
    multiplier: float = 1e-6  # |c_i| / alpha at a critical point
    orthogonality: float = 1e-8
    eigen: float = 1e-8
    fit_exponent: float = 0.3
    power_law_residual: float = 0.05  # RMS log-residual above which a fit is not a power law
    monotone_slack: float = 1e-10  # relative growth allowed between contraction ratios

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not v > 0:
                raise ConfigError(f"tolerance {f.name} must be positive, got {v!r}")

    def as_dict(self) -> dict:
        return asdict(self)

    def updated(self, **kw) -> "Tolerances":
        return replace(self, **kw)


DEFAULT_TOLERANCES = Tolerances()
