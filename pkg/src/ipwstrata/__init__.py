"""Finite-sample analysis of IPW estimators with discrete strata.

Exact variances of the true-propensity, estimated-propensity and hybrid
(propensity-collapsed) IPW estimators, the negative binomial moments they
rest on, and a seeded Monte Carlo engine that checks them.
"""

from .estimators import (
    EstimateResult,
    StratumContrast,
    collapse_identity_check,
    ipw_unitwise,
    stratified_estimate,
    stratum_contrast,
)
from .moments import (
    AppendixChain,
    StratumVariances,
    VarianceDifference,
    aggregate_variance,
    appendix_polynomial_chain,
    collapsed_group_moments,
    collapsed_pair_gap,
    neg_moment,
    neg_moment_bruteforce,
    neg_moment_c1,
    neg_moment_c2,
    stratum_variances,
    variance_difference,
)
from .simulate import (
    MonteCarloReport,
    OutcomeModel,
    SimConfig,
    draw_assignment,
    draw_outcomes,
    run_monte_carlo,
    sweep,
)
from .strata import (
    Dataset,
    PopulationFormatError,
    PopulationSpec,
    StratumSample,
    StratumSpec,
    Violation,
    WeightingScheme,
    collapse_by_propensity,
    collapse_dataset,
    load_population,
    validate,
)

__version__ = "0.1.0"
