"""Dynamic discrete choice estimation with certified approximation-error bounds."""

from .model import ClippedUniform, ContractViolation, CumulativeIntegral, FiniteSurrogate, ModelSpec
from .dp import (
    EULER_GAMMA,
    DrawSet,
    NonConvergence,
    ValueTable,
    bellman_apply,
    bellman_at,
    emax,
    solve_value_function,
    uniform_knots,
)
from .bounds import (
    BoundCertificate,
    DegenerateBound,
    EmptyAnchorSet,
    RefinementStalled,
    b_bar,
    b_factor,
    dense_grid_certificate,
    model_q_factor,
    q_bound,
    q_bounds,
    refine_bound,
    theorem1_sup,
    theorem2_envelope,
)
from .inference import (
    InnerSolve,
    LikelihoodEnvelope,
    MLEResult,
    OptimizerFailed,
    OptimizerSettings,
    Panel,
    chi2_quantile,
    choice_prob,
    envelope_at,
    loglik,
    loglik_envelope,
    mle,
    robust_ci_member,
    set_estimate_member,
    standard_ci_member,
    sup_lower_loglik,
    sup_upper_loglik,
)
from .sim import SimConfig, simulate_panel, truth_table
from .experiments import CoverageReport, CoverageRow, export_set_grid, membership_grid, run_coverage

__version__ = "0.1.0"
