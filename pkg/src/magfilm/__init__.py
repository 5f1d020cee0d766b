"""Thin magnetoelastic film energies: plate model, dimension limit, solvers.

The package evaluates the rescaled plate energy and its thin-film limit
(including the dimension-reduced stray-field system), builds recovery
sequences that witness the limit, audits the global-injectivity
constraints, and minimizes the limit energy over admissible film states.
"""

from .energy import EnergyBreakdown, LimitGradient, energy_3d, energy_limit, grad_limit
from .errors import (
    ConfigError,
    ConvergenceError,
    InadmissibleRecoveryError,
    InvalidParameterError,
    MagfilmError,
    NonEllipticError,
    RasterizationError,
)
from .gamma import build_recovery, classify_AID, sweep
from .grids import Field, Grid2, Grid3, read_field, write_field
from .minimize import MinimizeOptions, MinimizeTrace, minimize_limit
from .model import (
    AdmissibleTriple,
    Configuration3D,
    MaterialParams,
    elastic_W,
    grad_h,
    hess_h,
    phi,
)
from .stray import (
    ExtendedCoefficients,
    StrayOptions,
    StraySolution2D,
    StraySolution3D,
    assemble_reduced,
    galerkin_identity,
    magnetostatic_limit_term,
    rasterize_deformed,
    solve_full3d,
    solve_reduced,
)

__version__ = "0.1.0"

__all__ = [
    "AdmissibleTriple",
    "ConfigError",
    "Configuration3D",
    "ConvergenceError",
    "EnergyBreakdown",
    "ExtendedCoefficients",
    "Field",
    "Grid2",
    "Grid3",
    "InadmissibleRecoveryError",
    "InvalidParameterError",
    "LimitGradient",
    "MagfilmError",
    "MaterialParams",
    "MinimizeOptions",
    "MinimizeTrace",
    "NonEllipticError",
    "RasterizationError",
    "StrayOptions",
    "StraySolution2D",
    "StraySolution3D",
    "assemble_reduced",
    "build_recovery",
    "classify_AID",
    "elastic_W",
    "energy_3d",
    "energy_limit",
    "galerkin_identity",
    "grad_h",
    "grad_limit",
    "hess_h",
    "magnetostatic_limit_term",
    "minimize_limit",
    "phi",
    "rasterize_deformed",
    "read_field",
    "solve_full3d",
    "solve_reduced",
    "sweep",
    "write_field",
]
