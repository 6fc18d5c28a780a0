"""Sampler packages and divergence-bound estimators.

A sampler package pairs two stochastic procedures that share log-weight
semantics: ``simulate`` runs a sampler, returning an output point z and
the log-ratio log(p(u, z) / q(u; z)) over the auxiliary choices u made
during the run; ``regenerate`` takes an output point and samples a
plausible execution history for it under a meta-inference distribution
q(u; z), returning the same log-ratio.  The log-weight from ``simulate``
is a log harmonic-mean estimate of the output probability p(z); the one
from ``regenerate`` is a log importance-sampling estimate of it.

Given such a package, an unnormalized posterior density, and a source of
posterior (or gold-standard reference) samples, ``estimate_kl_bound``
computes an unbiased estimate of an upper bound on the symmetric KL
divergence between the sampler's output distribution and the posterior.
The two halves of that estimator are an evidence upper bound (EUBO) and
an evidence lower bound (ELBO); the KL bound is exactly their gap.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Any, Callable

from .errors import ImpossibleLogWeightError, ModelEvaluationError
from .rng import RngStream

LatentPoint = Any
#: Log of an (unnormalized) density over latent points.
LogDensityFn = Callable[[LatentPoint], float]
#: Draws one latent point from a reference or posterior sampler.
ReferenceSampler = Callable[[RngStream], LatentPoint]


@dataclass(frozen=True)
class SamplerPackage:
    """A sampler paired with its regeneration (meta-inference) sampler.

    Both procedures must be safe to call concurrently with distinct RNG
    streams; packages hold no mutable state.  For any output reachable by
    ``simulate``, ``regenerate`` must terminate with a finite log-weight
    with probability one.
    """

    simulate: Callable[[RngStream], tuple[LatentPoint, float]]
    regenerate: Callable[[LatentPoint, RngStream], float]


@dataclass(frozen=True)
class DivergenceEstimate:
    """Point estimate of the symmetric-KL upper bound and its two halves.

    ``kl_bound == eubo - elbo`` exactly.  Standard errors are per-term
    sample standard deviations divided by sqrt(n); they are reported, never
    thresholded here.  ``reference_mode`` is "exact" when the reference
    samples come from the true posterior and "approximate" when a stand-in
    sampler was used, in which case the bound is only subjectively valid.
    """

    kl_bound: float
    eubo: float
    elbo: float
    eubo_stderr: float
    elbo_stderr: float
    n_reference: int
    n_forward: int
    reference_log_ratios: tuple[float, ...]
    forward_log_ratios: tuple[float, ...]
    reference_mode: str = "exact"

    def __post_init__(self):
        if len(self.reference_log_ratios) != self.n_reference:
            raise ValueError("reference_log_ratios length mismatch")
        if len(self.forward_log_ratios) != self.n_forward:
            raise ValueError("forward_log_ratios length mismatch")


def _checked_log_ratio(
    log_posterior: LogDensityFn, z: LatentPoint, logw: float, kind: str, index: int
) -> float:
    """log pi~(z) - logw with the package's error contract applied."""
    if math.isnan(logw):
        raise ModelEvaluationError(f"{kind} sample {index}: log-weight is NaN")
    if math.isinf(logw):
        raise ImpossibleLogWeightError(
            f"{kind} sample {index}: log-weight is {logw:+}"
        )
    lp = log_posterior(z)
    if math.isnan(lp):
        raise ModelEvaluationError(
            f"{kind} sample {index}: posterior log-density is NaN at z={z!r}"
        )
    if math.isinf(lp):
        raise ImpossibleLogWeightError(
            f"{kind} sample {index}: posterior log-density is {lp:+} at z={z!r}"
        )
    return lp - logw


def _mean_stderr(values: list[float], label: str) -> tuple[float, float]:
    n = len(values)
    mean = math.fsum(values) / n
    if n == 1:
        warnings.warn(
            f"{label}: single sample, standard error degenerately 0", stacklevel=3
        )
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var / n)


def _forward_log_ratios(
    pkg: SamplerPackage, log_posterior: LogDensityFn, m: int, rng: RngStream
) -> list[float]:
    out = []
    for j in range(m):
        z, logw = pkg.simulate(rng.split(j))
        out.append(_checked_log_ratio(log_posterior, z, logw, "simulate", j))
    return out


def _reference_log_ratios(
    pkg: SamplerPackage,
    reference: ReferenceSampler,
    log_posterior: LogDensityFn,
    n: int,
    rng: RngStream,
) -> list[float]:
    out = []
    for i in range(n):
        z = reference(rng.split(0, i))
        logw = pkg.regenerate(z, rng.split(1, i))
        out.append(_checked_log_ratio(log_posterior, z, logw, "regenerate", i))
    return out


def estimate_elbo(
    pkg: SamplerPackage, log_posterior: LogDensityFn, m: int, rng: RngStream
) -> tuple[float, float]:
    """Monte Carlo evidence lower bound: mean of log pi~(z) - logw over simulate.

    Returns (mean, stderr).  The expectation is <= log of the posterior
    normalizer.  Any -inf log-weight or non-finite posterior evaluation
    aborts with a diagnostic naming the offending sample.
    """
    if m < 1:
        raise ValueError(f"need at least one forward sample, got m={m}")
    return _mean_stderr(_forward_log_ratios(pkg, log_posterior, m, rng), "elbo")


def estimate_eubo(
    pkg: SamplerPackage,
    reference: ReferenceSampler,
    log_posterior: LogDensityFn,
    n: int,
    rng: RngStream,
) -> tuple[float, float]:
    """Monte Carlo evidence upper bound over regenerated reference samples.

    Returns (mean, stderr).  When the reference sampler is exact the
    expectation is >= log of the posterior normalizer.
    """
    if n < 1:
        raise ValueError(f"need at least one reference sample, got n={n}")
    return _mean_stderr(
        _reference_log_ratios(pkg, reference, log_posterior, n, rng), "eubo"
    )


def estimate_kl_bound(
    pkg: SamplerPackage,
    reference: ReferenceSampler,
    log_posterior: LogDensityFn,
    n_reference: int,
    n_forward: int,
    rng: RngStream,
    reference_mode: str = "exact",
) -> DivergenceEstimate:
    """Estimate an upper bound on the symmetric KL divergence.

    Averages log pi~(z) - logw over ``n_reference`` regenerated reference
    samples (EUBO) and over ``n_forward`` fresh simulate calls (ELBO) and
    returns their difference together with both halves and per-sample
    log-ratios.  The bound is on the divergence over the extended space
    that includes the sampler's auxiliary choices, hence it dominates the
    output-space symmetric KL.
    """
    if n_reference < 1:
        raise ValueError(f"need at least one reference sample, got {n_reference}")
    if n_forward < 1:
        raise ValueError(f"need at least one forward sample, got {n_forward}")
    ref = _reference_log_ratios(pkg, reference, log_posterior, n_reference, rng.split(0))
    fwd = _forward_log_ratios(pkg, log_posterior, n_forward, rng.split(1))
    eubo, eubo_se = _mean_stderr(ref, "eubo")
    elbo, elbo_se = _mean_stderr(fwd, "elbo")
    return DivergenceEstimate(
        kl_bound=eubo - elbo,
        eubo=eubo,
        elbo=elbo,
        eubo_stderr=eubo_se,
        elbo_stderr=elbo_se,
        n_reference=n_reference,
        n_forward=n_forward,
        reference_log_ratios=tuple(ref),
        forward_log_ratios=tuple(fwd),
        reference_mode=reference_mode,
    )


def tractable_adapter(
    sample: Callable[[RngStream], LatentPoint], log_prob: LogDensityFn
) -> SamplerPackage:
    """Wrap a sampler with a tractable, normalized output density.

    With no auxiliary randomness the log-weight reduces to the log output
    probability itself: simulate returns (z, log p(z)) and regenerate(z)
    returns log p(z).  A -inf density at a supplied point is an
    impossibility error; NaN is a model bug.
    """

    def checked_log_prob(z: LatentPoint) -> float:
        lp = log_prob(z)
        if math.isnan(lp):
            raise ModelEvaluationError(f"log-density is NaN at z={z!r}")
        if lp == -math.inf:
            raise ImpossibleLogWeightError(f"log-density is -inf at z={z!r}")
        return lp

    def simulate(rng: RngStream) -> tuple[LatentPoint, float]:
        z = sample(rng)
        return z, checked_log_prob(z)

    def regenerate(z: LatentPoint, rng: RngStream) -> float:
        del rng  # no auxiliary randomness to regenerate
        return checked_log_prob(z)

    return SamplerPackage(simulate=simulate, regenerate=regenerate)
