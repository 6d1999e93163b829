"""Forward, rare-event and MCMC sampling engines."""

from .forward import (
    AisResult,
    ImportanceDensity,
    ImportanceResult,
    adaptive_importance_sampling,
    importance_estimate,
    latin_hypercube,
    monte_carlo,
    std_normal_logpdf,
    to_physical,
    to_standard_normal,
)
from .mcmc import (
    ChainResult,
    EnsembleState,
    autocorrelation,
    default_de_gamma,
    differential_evolution_step,
    gelman_rubin,
    integrated_autocorr_time,
    mcse,
    mh_chain,
    parallel_mh_step,
    run_ensemble,
    stretch_move_step,
)
from .subset import SubsetResult, SubsetState, active_learning_subset_simulation, subset_simulation

__all__ = [
    "ChainResult",
    "EnsembleState",
    "autocorrelation",
    "default_de_gamma",
    "differential_evolution_step",
    "gelman_rubin",
    "integrated_autocorr_time",
    "mcse",
    "mh_chain",
    "parallel_mh_step",
    "run_ensemble",
    "stretch_move_step",
    "AisResult",
    "ImportanceDensity",
    "ImportanceResult",
    "SubsetResult",
    "SubsetState",
    "active_learning_subset_simulation",
    "adaptive_importance_sampling",
    "importance_estimate",
    "latin_hypercube",
    "monte_carlo",
    "std_normal_logpdf",
    "subset_simulation",
    "to_physical",
    "to_standard_normal",
]
