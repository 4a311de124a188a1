"""Minimax-robust split-plot designs.

Construct and evaluate split-plot designs that jointly control estimation
variance (the D criterion) and worst-case model-misspecification bias, via
the closed-form minimax loss, an annealing/point-exchange search, and
rank-update linear algebra for fast incremental evaluation.
"""

from ._backend import BACKEND, NUMBA_ENABLED
from .annealer import AnnealParams, CandidateSets, SearchResult, accept, initial_design, search
from .contrasts import (
    ContrastSystem,
    Factor,
    FactorLayout,
    RequirementSet,
    Term,
    build_contrasts,
    build_h1,
    build_h2,
    parse_term,
    term_column,
    v1_diagonal,
)
from .criterion import (
    CriterionState,
    LossReport,
    compute_state,
    evaluate_design,
    loss,
    loss_crd,
    phi,
    rescaled_loss,
)
from .design import (
    ModelContext,
    ModelMatrices,
    SplitPlotDesign,
    VarianceSpec,
    WholePlot,
    build_model_matrices,
    design_from_csv,
    design_to_csv,
    glse_estimate,
    sigma_inverse_blocks,
)
from .errors import (
    CapacityError,
    ConfigError,
    InfeasibleDesignError,
    InvalidScaleError,
    InvalidTermError,
    MalformedDesignError,
    SingularDesignError,
    UpdateDegenerateError,
)
from .oracle import EllipsoidSpec, ellipsoid_max, mse_determinant, naive_loss, sampling_lower_bound
from .updates import MoveDelta, apply_delta, delta_interchange, delta_sp_exchange, delta_wp_exchange, refresh

__version__ = "0.1.0"

__all__ = [
    "AnnealParams",
    "BACKEND",
    "CandidateSets",
    "CapacityError",
    "ConfigError",
    "ContrastSystem",
    "CriterionState",
    "EllipsoidSpec",
    "Factor",
    "FactorLayout",
    "InfeasibleDesignError",
    "InvalidScaleError",
    "InvalidTermError",
    "LossReport",
    "MalformedDesignError",
    "ModelContext",
    "ModelMatrices",
    "MoveDelta",
    "NUMBA_ENABLED",
    "RequirementSet",
    "SearchResult",
    "SingularDesignError",
    "SplitPlotDesign",
    "Term",
    "UpdateDegenerateError",
    "VarianceSpec",
    "WholePlot",
    "accept",
    "apply_delta",
    "build_contrasts",
    "build_h1",
    "build_h2",
    "build_model_matrices",
    "compute_state",
    "delta_interchange",
    "delta_sp_exchange",
    "delta_wp_exchange",
    "design_from_csv",
    "design_to_csv",
    "ellipsoid_max",
    "evaluate_design",
    "glse_estimate",
    "initial_design",
    "loss",
    "loss_crd",
    "mse_determinant",
    "naive_loss",
    "parse_term",
    "phi",
    "refresh",
    "rescaled_loss",
    "sampling_lower_bound",
    "search",
    "sigma_inverse_blocks",
    "term_column",
    "v1_diagonal",
]
