"""Open-faced sandwich adjustment of quasi-posterior MCMC samples.

Run MCMC on a non-likelihood objective, estimate the score covariance P
and curvature Q, and rotate/scale the chain so that credible intervals
attain their nominal frequentist coverage.
"""

from .exceptions import (
    CapabilityError,
    ConfigError,
    EstimationError,
    IllConditionedError,
    NotPositiveDefiniteError,
    OfsError,
    SamplerDiagnosticError,
)
from .linalg import (
    empirical_quantile,
    numerical_gradient,
    numerical_hessian,
    sample_covariance,
    spd_inverse,
    spd_sqrt,
)
from .model import (
    Dataset,
    ObjectiveModel,
    ParamVec,
    Prior,
    PriorSpec,
    flat,
    half_cauchy,
    log_prior,
    log_quasi_posterior,
    normal,
    uniform,
)
from .samplers import (
    AdaptConfig,
    Chain,
    ChainConfig,
    adapt_proposal,
    curvature_metropolis,
    derive_seed,
    quasi_bayes_estimate,
    rw_metropolis,
    sub_seed,
)
from .sandwich import (
    AdjustmentMatrix,
    CredibleInterval,
    SandwichEstimate,
    assemble_omega,
    credible_interval,
    curvature_matrix,
    estimate_sandwich,
    ofs_adjust,
    p_bootstrap,
    p_moment,
    p_plugin,
    partial_adjustment,
    q_from_chain,
    q_from_hessian,
    q_plugin,
)
from .gibbs import GibbsBlockSpec, conditional_ofs_gibbs, gibbs_run, marginal_ofs_gibbs
from .gptaper import (
    ExponentialFamily,
    GneitingFamily,
    TaperSpec,
    TaperedGpModel,
    grid_locations,
    simulate_gp,
)
from .pairwise import PairwiseGaussianModel, simulate_replicates
from .coverage import (
    CoverageRow,
    CoverageTable,
    ExperimentConfig,
    build_scenario,
    coverage_report,
    mc_stderr,
    run_coverage_experiment,
)

__version__ = "0.1.0"
