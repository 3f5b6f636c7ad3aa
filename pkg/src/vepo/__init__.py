"""Value-enhanced policy optimization for offline RL on finite MDPs."""
from .errors import (
    ConvergenceError,
    CoverageError,
    DimensionError,
    DivergenceError,
    InfeasibleError,
    InfiniteDivergenceError,
    NumericalError,
)
from .estimators import (
    FoldAssignment,
    NuisanceConfig,
    NuisanceSet,
    crossfit_coefficients,
    eta1_crossfit,
    eta1_is1,
    eta1_is2,
    eta1_plugin,
    make_folds,
    oracle_nuisances,
    psi1,
    psi2,
    psi3,
    psi_total,
)
from .mdp import (
    Dataset,
    StochasticPolicy,
    TabularMDP,
    avg_kl,
    exact_eta1,
    exact_eta2,
    exact_q,
    exact_ratio,
    exact_stationary,
    exact_value,
    exact_visitation,
    monte_carlo_value,
    simulate_dataset,
    value_iteration,
)
from .optimize import TrustRegionProblem, VepoConfig, solve_penalized, solve_trust_region, vepo
from .q_estimation import QEstimate, RegressorConfig, corrupt_q, fqe, fqi
from .ratio import RatioEstimate, RatioFitConfig, corrupt_ratio, delta_residual, fit_ratio_minimax
from .toy import build_toy_mdp, kappa_policy, toy_behavior
from .transition import (
    PseudoSampleSet,
    TransitionEstimate,
    approx_visitation_expectation,
    corrupt_transition,
    fit_transition_tabular,
    pseudo_samples_conditional,
    pseudo_samples_integrated,
)
