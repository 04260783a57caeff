"""Concentrating solutions of ``-ε²Δu + ε^{2s}(-Δ)^s u + u = u^p`` in bounded domains.

Everything runs in rescaled variables on a periodic, cell-centred box
``[-L, L]^n`` where the operator ``-Δ + (-Δ)^s + 1`` is a Fourier multiplier.
"""

__version__ = "0.1.0"

from .config import DEFAULT_TOLERANCES, Tolerances
from .dirichlet import (
    DirichletSolve,
    DomainMask,
    DomainSpec,
    barrier_h,
    deficiency_v,
    make_mask,
    solve_dirichlet,
    weighted_norm,
)
from .energy import EnergyReport, LandscapeScan, energy_I_eps, reduced_energy_H, scan_landscape
from .errors import *  # noqa: F401,F403
from .reduction import (
    ProjectedSolve,
    ReductionCache,
    ReductionResult,
    VerificationReport,
    assemble_and_verify,
    contract_psi,
    nonlinear_error_E,
    optimize_xi,
    reduced_J,
    solve_projected,
)
from .spectral_core import (
    DecayFit,
    GridSpec,
    ScalarField,
    SymbolSpec,
    apply_multiplier,
    fit_decay,
    integrate,
    krylov_solve,
    read_field,
    solve_multiplier,
    write_field,
)
from .whole_space import (
    GroundState,
    ModelParams,
    compute_ground_state,
    fundamental_solution,
    linearized_spectrum,
    translate,
)
