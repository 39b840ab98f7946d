"""Mean-field CAVI, Metropolis-Hastings and MCMC-seeded Hybrid CAVI, with a benchmark harness."""
from .bench import ExperimentConfig, Report, ReportRow, emit_report, load_report, run_experiment_conjugate, run_experiment_tdf
from .cavi import (
    CaviTrace,
    GaussianFactor,
    MeanFieldPosterior,
    OptimizerConfig,
    QuadratureSettings,
    ShiftedGammaFactor,
    cavi_closed_form,
    cavi_numerical,
    elbo,
    factor_entropy,
    gaussian_mean_field,
    shifted_gamma_mean_field,
)
from .divergence import GridSpec, KLValue, kl_discrete, kl_gaussian, kl_quadrature
from .errors import *  # noqa: F401,F403
from .hybrid import HybridConfig, HybridResult, hybrid_cavi, mom_gaussian, mom_shifted_gamma
from .mcmc import Chain, ChainMoments, MHConfig, chain_moments, metropolis_hastings
from .models import GaussianDensity, GaussianMeanModel, TDegreesModel, conjugate_posterior
from .stochastic import (
    gaussian_copula_sample,
    make_rng,
    mvn_logpdf,
    mvn_sample,
    quadrature_rule,
    t_logpdf,
    t_quantile,
)

__version__ = "0.1.0"
