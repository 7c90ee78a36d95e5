"""Distributionally robust linear prediction with partially identified shifts.

Population risks and predictors for multi-environment linear models with
additive covariate shifts and hidden confounding, the worst-case robust risk
over all models consistent with the training environments, finite-sample
estimation of its minimizer, classical robust baselines, and an experiment
driver for synthetic sweeps and generic multi-environment CSV data.
"""

from .estimate import (
    EnvMoments,
    NuisanceEstimates,
    SolverConfig,
    SolverResult,
    WorstCaseFit,
    anchor_crosscheck_beta,
    empirical_worst_case_loss,
    estimate_identified_beta,
    estimate_nuisance,
    estimate_shift_space,
    fit_baseline,
    fit_worst_case_robust,
    reference_reduction,
    solve_composite,
)
from .estimators import (
    AnchorRegressor,
    DRIGRegressor,
    PooledOLSRegressor,
    WorstCaseRobustRegressor,
)
from .linalg import (
    SubspaceBasis,
    TestBoundDecomposition,
    check_psd_matrix,
    decompose_test_bound,
    loewner_leq,
    max_principal_angle,
    orthogonal_complement,
    projection,
    range_basis,
)
from .risk import (
    IdentifiedParams,
    MinimaxBound,
    RiskBudget,
    RiskSlopes,
    abstaining_predictor,
    anchor_predictor,
    drig_bound,
    equivalent_params,
    gamma_prime_threshold,
    identified_params,
    identified_robust_risk,
    lower_bound_predictor,
    minimax_lower_bound,
    population_objective_terms,
    robust_predictor,
    robust_risk,
    unseen_risk_slopes,
    worst_case_robust_risk,
)
from .scm import (
    AdversarialInstance,
    Dataset,
    EnvironmentShift,
    ModelParams,
    PopulationMoments,
    ScmSpec,
    adversarial_params,
    check_shift_collection,
    induced_shift,
    population_moments,
    random_instance,
    sample_dataset,
    sample_environment,
    scm_to_dgp,
    shift_span,
)

__version__ = "0.1.0"
