"""Kernel-weighted triangulation of causal effect estimates across candidate models."""
from .data import (
    Dataset,
    EstimateMethod,
    EstimateWithIF,
    EstimatorStyle,
    InferenceBranch,
    ModelKind,
    ModelResult,
    ModelSpec,
    TriangulationResult,
    load_csv,
    write_csv,
)
from .estimators import (
    DiscreteJoint,
    Roles,
    backdoor_aipw,
    backdoor_plugin,
    exact_functionals,
    frontdoor_dual_ipw,
    iv_plugin,
)
from .exceptions import *  # noqa: F401,F403
from .glm import Family, GLMFit, fit_glm, predict_mean
from .inference import InferenceConfig, bootstrap_ci, subsample_ci, triangulate_data, wald_ci
from .kernel import (
    KernelConfig,
    Theorem1Diagnostics,
    discrimination_factor,
    gamma_partials,
    gaussian_kernel,
    is_degenerate,
    naive_triangulate,
    theorem1_diagnostics,
    triangulate,
    weights,
)
from .pipeline import ModelEstimates, estimate_model, estimate_models
from .simulation import (
    Scenario,
    ScenarioConfig,
    TrialMetrics,
    generate_s1,
    generate_s2,
    oracle_ate,
    oracle_betas,
    run_trials,
)
from .validity import MediatorModel, ORSpec, log_or_plugin, log_or_zestimator, verma_log_or

__version__ = "0.1.0"
