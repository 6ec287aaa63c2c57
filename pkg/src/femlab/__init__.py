"""Mixed finite element lab for non-selfadjoint indefinite second-order problems."""

from .analysis import (
    compute_errors,
    compute_inf_sup,
    constrained_flux_projection,
    fit_slope,
    inf_sup_svd_oracle,
    inner_approx_sweep,
    solve_mixed,
)
from .assembly import assemble_b, assemble_pair, assemble_rhs, manufactured_problem
from .coefficients import CoefficientSet, Field, Formulation, presets, validate_assumption_A
from .errors import (
    CoefficientError,
    ConfigError,
    FemlabError,
    MeshError,
    SingularSystemError,
    SpaceError,
)
from .fe_spaces import dg_space, flux_space, l2_project_Pk
from .mesh import Triangulation, build_structured_mesh, read_mesh, refine_uniform, write_mesh

__version__ = "0.1.0"

__all__ = [
    "CoefficientError", "CoefficientSet", "ConfigError", "FemlabError", "Field",
    "Formulation", "MeshError", "SingularSystemError", "SpaceError", "Triangulation",
    "assemble_b", "assemble_pair", "assemble_rhs", "build_structured_mesh",
    "compute_errors", "compute_inf_sup", "constrained_flux_projection", "dg_space",
    "fit_slope", "flux_space", "inf_sup_svd_oracle", "l2_project_Pk", "inner_approx_sweep",
    "manufactured_problem", "presets", "read_mesh", "refine_uniform", "solve_mixed",
    "validate_assumption_A", "write_mesh",
]
