"""Monte Carlo testing, composite-likelihood fitting and power studies."""

from .composite import ClFit, CloseLags, close_lags, cl_separable_terms, composite_likelihood, fit_cl
from .envelope import (
    STATISTICS,
    CurveSet,
    EnvelopeResult,
    HomogeneousIntensity,
    SeparableIntensity,
    SimulationError,
    StatisticSpec,
    concat_statistics,
    envelope_test,
    extreme_ranks,
    global_rank_envelope,
    permutation_test,
    poisson_centering,
)
from .power import PowerTable, estimate_cost, power_study

__all__ = [
    "ClFit",
    "CloseLags",
    "close_lags",
    "cl_separable_terms",
    "composite_likelihood",
    "fit_cl",
    "STATISTICS",
    "CurveSet",
    "EnvelopeResult",
    "HomogeneousIntensity",
    "SeparableIntensity",
    "SimulationError",
    "StatisticSpec",
    "concat_statistics",
    "envelope_test",
    "extreme_ranks",
    "global_rank_envelope",
    "permutation_test",
    "poisson_centering",
    "PowerTable",
    "estimate_cost",
    "power_study",
]
