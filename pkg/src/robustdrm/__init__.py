"""Dynamic robust distortion risk measures and an actor-critic built on them.

The library provides grid quantile/distortion machinery, closed-form
worst-case solvers over Wasserstein budgets (with and without matched
moments), strictly consistent scoring losses, compact monotone-constrained
networks, a cointegrated-price portfolio environment, an alternating
actor-critic trainer, and brute-force oracles certifying every closed form.
"""

from .grids import (
    DistortionFunction,
    GridFunction,
    QuantileFunction,
    cvar_distortion,
    distortion_risk,
    empirical_quantile,
    grid_nodes,
    inner_product,
    isotonic_project,
    lower_tail_distortion,
    mean_distortion,
    wasserstein2,
)
from .scoring import CostPartition, alpha_beta_distortion, crps, score_mean, score_var, score_var_cvar
from .worstcase import (
    MomentWorstCase,
    SetKind,
    UncertaintySet,
    WassersteinWorstCase,
    robust_risk,
    shifted_robust_risk,
    worst_case_moments,
    worst_case_wasserstein,
)

__version__ = "0.1.0"

__all__ = [
    "GridFunction",
    "QuantileFunction",
    "DistortionFunction",
    "grid_nodes",
    "inner_product",
    "wasserstein2",
    "isotonic_project",
    "distortion_risk",
    "empirical_quantile",
    "mean_distortion",
    "cvar_distortion",
    "lower_tail_distortion",
    "CostPartition",
    "score_mean",
    "score_var",
    "score_var_cvar",
    "crps",
    "alpha_beta_distortion",
    "SetKind",
    "UncertaintySet",
    "WassersteinWorstCase",
    "MomentWorstCase",
    "robust_risk",
    "shifted_robust_risk",
    "worst_case_moments",
    "worst_case_wasserstein",
    "__version__",
]
