"""Accelerated Sinkhorn for entropic optimal transport: SK with low-dimensional Newton corrections."""

from .core import (
    CostMatrix,
    Coupling,
    DiscreteMeasure,
    EotProblem,
    Potentials,
    coupling_from,
    ctransform_of_f,
    ctransform_of_g,
    log_sum_exp,
    marginal_error,
    osc_norm,
)
from .objective import (
    RestrictedDerivatives,
    dual_value,
    full_semi_dual_hessian,
    restricted_derivatives,
    semi_dual_gradient,
    semi_dual_hessian_quadform,
    semi_dual_value,
)
from .solver import (
    AnnealSchedule,
    IterationRecord,
    SolveResult,
    SolverConfig,
    anneal,
    estimate_contraction,
    newton_step,
    sk_sweep,
    solve,
)
from .spectral import (
    EigensolverError,
    SinkhornOperator,
    SpectralBasis,
    SpectrumReport,
    build_operator,
    dense_modes,
    projector_distance,
    spectrum_report,
    top_modes,
)

__version__ = "0.1.0"
