"""Minimum empirical phi-divergence estimation and testing for moment-condition models."""

__version__ = "0.1.0"

from .divergence import (
    DivergenceSpec,
    RafValue,
    conjugate_eval,
    divergence_from_name,
    make_power_divergence,
    phi_eval,
    phi_prime_inverse,
    raf_value,
)
from .dual import (
    DualSolution,
    FeasibilityReport,
    SolverConfig,
    dual_objective,
    feasibility_probe,
    solve_inner,
)
from .errors import (
    DegreesOfFreedomError,
    DimensionMismatch,
    DomainError,
    MephdError,
    NoFeasibleTheta,
    NoInteriorPoint,
    NotConverged,
    ParseError,
    SingularHessian,
    SingularMatrix,
    UnknownDivergence,
    UnknownModel,
)
from .estimator import (
    CdfEstimate,
    EstimationResult,
    cdf_estimate,
    estimate,
    misspec_covariance,
    variance_c,
    variance_theta,
)
from .inference import (
    ConfidenceRegion,
    TestReport,
    chi2_cdf,
    chi2_quantile,
    composite_test,
    confidence_region,
    fit_statistic_at_theta,
    model_test,
    simple_test,
)
from .model import MomentModel, Sample, builtin_model, gbar_eval, load_sample, register_model
from .montecarlo import (
    Contamination,
    ScenarioConfig,
    ScenarioReport,
    generate_sample,
    pmle_normal_link,
    run_scenario,
)
from .primal import PrimalSolution, lagrange_residual, primal_project
