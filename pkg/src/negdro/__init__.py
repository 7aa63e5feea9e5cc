"""Causal invariance learning from multi-environment data via negative-weight DRO."""

from .baselines import BaselineResult, causal_dantzig, drig, erm, exhaustive_invariance_search
from .errors import (
    ConfigError,
    CsvParseError,
    CyclicGraphError,
    DimensionMismatchError,
    DimensionTooLargeError,
    EmptyChildSetError,
    EmptySelectionError,
    NearSingularError,
    NegdroError,
    NoInvariantSubsetError,
    NonFiniteError,
    TimeoutExceededError,
    UnknownScenarioError,
    UpsilonTooLargeError,
)
from .estimators import (
    CausalDantzigRegressor,
    DRIGRegressor,
    InvariantSubsetRegressor,
    NegDRORegressor,
    PooledRegressor,
)
from .identify import (
    IdCertificate,
    InterventionMoments,
    SubsetProbe,
    a_matrix,
    check_condition_heterogeneity,
    check_condition_relaxed,
    invariance_probe,
)
from .model import (
    EnvironmentSpec,
    InterventionSpec,
    JointSecondMoment,
    Scenario,
    SemModel,
    children_of_outcome,
    population_moments,
    validate_acyclic,
)
from .risk import (
    EnvMoments,
    env_moments,
    ols,
    ols_subset,
    pooled_moments,
    risk,
    risk_gradient,
    smoothness_constant,
)
from .simulate import (
    EnvironmentData,
    MultiEnvData,
    derive_seed,
    make_scenario,
    sample_environment,
    sample_scenario,
    scenario_names,
)
from .solvers import (
    ProxResult,
    SolveResult,
    SolverConfig,
    default_upsilon,
    inner_max,
    inner_max_penalized,
    objective_forms_agree,
    phi_mu_gradient,
    phi_mu_value,
    phi_value,
    project_simplex,
    prox,
    solve_penalized,
    solve_subgradient,
    weak_convexity_bound,
)

__version__ = "0.1.0"

__all__ = [
    "BaselineResult",
    "CausalDantzigRegressor",
    "ConfigError",
    "CsvParseError",
    "CyclicGraphError",
    "DimensionMismatchError",
    "DimensionTooLargeError",
    "DRIGRegressor",
    "EmptyChildSetError",
    "EmptySelectionError",
    "EnvMoments",
    "EnvironmentData",
    "EnvironmentSpec",
    "IdCertificate",
    "InterventionMoments",
    "InterventionSpec",
    "InvariantSubsetRegressor",
    "JointSecondMoment",
    "MultiEnvData",
    "NearSingularError",
    "NegDRORegressor",
    "NegdroError",
    "NoInvariantSubsetError",
    "NonFiniteError",
    "PooledRegressor",
    "ProxResult",
    "Scenario",
    "SemModel",
    "SolveResult",
    "SolverConfig",
    "SubsetProbe",
    "TimeoutExceededError",
    "UnknownScenarioError",
    "UpsilonTooLargeError",
    "a_matrix",
    "causal_dantzig",
    "check_condition_heterogeneity",
    "check_condition_relaxed",
    "children_of_outcome",
    "default_upsilon",
    "derive_seed",
    "drig",
    "env_moments",
    "erm",
    "exhaustive_invariance_search",
    "inner_max",
    "inner_max_penalized",
    "invariance_probe",
    "make_scenario",
    "objective_forms_agree",
    "ols",
    "ols_subset",
    "phi_mu_gradient",
    "phi_mu_value",
    "phi_value",
    "pooled_moments",
    "population_moments",
    "project_simplex",
    "prox",
    "risk",
    "risk_gradient",
    "sample_environment",
    "sample_scenario",
    "scenario_names",
    "smoothness_constant",
    "solve_penalized",
    "solve_subgradient",
    "validate_acyclic",
    "weak_convexity_bound",
]
