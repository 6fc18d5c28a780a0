"""Concrete inference problems shipped with the package."""

from .datasets import load_observations
from .dpm import (
    DpmModel,
    canonicalize,
    crp_log_prior,
    dpm_as_seqobs,
    dpm_exact_posterior_sampler,
    dpm_gibbs_schedule,
    dpm_log_joint,
    enumerate_assignment_posterior,
    enumerate_assignments,
    log_predictive,
)
from .grid import (
    GridModel,
    grid_as_config,
    grid_exact_posterior_sampler,
    grid_log_unnorm_posterior,
    skewed_three_state,
    uniform_two_state,
)
from .linreg import (
    LinRegModel,
    default_design,
    linreg_as_seqobs,
    linreg_exact_posterior_sampler,
    linreg_imh_schedule,
    linreg_log_evidence,
    linreg_posterior,
    linreg_rw_schedule,
)

__all__ = [
    "DpmModel",
    "GridModel",
    "LinRegModel",
    "canonicalize",
    "crp_log_prior",
    "default_design",
    "dpm_as_seqobs",
    "dpm_exact_posterior_sampler",
    "dpm_gibbs_schedule",
    "dpm_log_joint",
    "enumerate_assignment_posterior",
    "enumerate_assignments",
    "grid_as_config",
    "grid_exact_posterior_sampler",
    "grid_log_unnorm_posterior",
    "linreg_as_seqobs",
    "linreg_exact_posterior_sampler",
    "linreg_imh_schedule",
    "linreg_log_evidence",
    "linreg_posterior",
    "linreg_rw_schedule",
    "load_observations",
    "log_predictive",
    "skewed_three_state",
    "uniform_two_state",
]
