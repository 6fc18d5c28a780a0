"""Divergence bounds for sequential Monte Carlo samplers.

Pairs generic SMC samplers with regeneration (meta-inference) samplers and
uses them to estimate upper bounds on the symmetric KL divergence between
a sampler's output distribution and a Bayesian posterior, with brute-force
enumeration oracles to verify the underlying identities at small scale.
"""

from .core import (
    DivergenceEstimate,
    SamplerPackage,
    estimate_elbo,
    estimate_eubo,
    estimate_kl_bound,
    tractable_adapter,
)
from .rng import RngStream
from .smc import (
    ExecutionHistory,
    InitKernel,
    Kernel,
    SmcConfig,
    SmcStep,
    as_sampler_package,
    categorical_from_logweights,
    p_joint_log_prob,
    q_joint_log_prob,
    rand_ancestry,
    smc_regenerate,
    smc_regenerate_traced,
    smc_simulate,
    smc_simulate_traced,
)

__all__ = [
    "DivergenceEstimate",
    "ExecutionHistory",
    "InitKernel",
    "Kernel",
    "RngStream",
    "SamplerPackage",
    "SmcConfig",
    "SmcStep",
    "as_sampler_package",
    "categorical_from_logweights",
    "estimate_elbo",
    "estimate_eubo",
    "estimate_kl_bound",
    "p_joint_log_prob",
    "q_joint_log_prob",
    "rand_ancestry",
    "smc_regenerate",
    "smc_regenerate_traced",
    "smc_simulate",
    "smc_simulate_traced",
    "tractable_adapter",
]

__version__ = "0.1.0"
