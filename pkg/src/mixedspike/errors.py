"""Exception hierarchy shared by every module."""

from __future__ import annotations


class MixedSpikeError(Exception):
    """Base class for all library errors."""


class InvalidFieldError(MixedSpikeError, ValueError):
    """A field holds non-finite values or has the wrong shape."""


class GridMismatchError(MixedSpikeError, ValueError):
    """Two fields on different grids were combined."""


class SingularSymbolError(MixedSpikeError, ValueError):
    """The multiplier vanishes at k = 0, so it cannot be inverted."""


class GeometryError(MixedSpikeError, ValueError):
    """A point, annulus or domain does not fit the computational box."""


class InsufficientDataError(MixedSpikeError, ValueError):
    """Too few samples to fit or scan."""


class FieldFormatError(MixedSpikeError, ValueError):
    """A field file is malformed."""


class UnsupportedVersionError(FieldFormatError):
    """A field file has a newer format version than this reader knows."""


class SolverDivergenceError(MixedSpikeError, RuntimeError):
    """A Krylov solve did not reach its tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class GroundStateNotFoundError(MixedSpikeError, RuntimeError):
    """The fixed-point phase collapsed or blew up."""


class RefinementError(MixedSpikeError, RuntimeError):
    """Newton refinement stagnated above the residual target."""

    def __init__(self, message: str, best_residual: float):
        super().__init__(f"{message} (best residual={best_residual:.3e})")
        self.best_residual = best_residual


class KernelDimensionError(MixedSpikeError, RuntimeError):
    """The linearized operator's kernel is not spanned by the n translation modes."""

    def __init__(self, message: str, spectrum=None):
        super().__init__(message)
        self.spectrum = spectrum


class IndefiniteOperatorError(MixedSpikeError, RuntimeError):
    """The masked operator with potential lost coercivity at the solution."""


class ContractionFailureError(MixedSpikeError, RuntimeError):
    """The fixed-point map for the perturbation psi did not contract."""

    def __init__(self, message: str, ratios):
        super().__init__(f"{message}; ratios={[round(r, 4) for r in ratios]}")
        self.ratios = list(ratios)


class BoundaryMinimumError(MixedSpikeError, RuntimeError):
    """The minimizer of the reduced functional sits on the collar of the admissible set."""


class ConfigError(MixedSpikeError, ValueError):
    """Invalid run configuration."""
