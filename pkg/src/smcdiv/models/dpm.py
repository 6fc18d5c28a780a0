"""Dirichlet process mixture with collapsed cluster parameters.

One-dimensional Gaussian observations with known within-cluster variance
and a conjugate Gaussian prior over cluster means, so cluster parameters
integrate out and every predictive is closed form.  Latents are the
cluster assignments alone, kept in canonical first-appearance labeling so
assignment vectors are in bijection with partitions and tiny instances
can be enumerated exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ModelConsistencyError
from ..disttable import DistTable
from ..rng import RngStream
from ..seqobs import RejuvenationSchedule, SeqObsModel, gibbs_site_kernel

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class DpmModel:
    alpha: float
    observations: tuple[float, ...]
    prior_mean: float = 0.0
    prior_var: float = 1.0
    obs_var: float = 1.0
    base: str = "normal-known-var"

    def __post_init__(self):
        if self.alpha <= 0.0:
            raise ValueError("concentration alpha must be positive")
        if self.prior_var <= 0.0 or self.obs_var <= 0.0:
            raise ValueError("variances must be positive")
        if self.base != "normal-known-var":
            raise ModelConsistencyError(
                f"base measure {self.base!r} is not conjugate; only "
                "'normal-known-var' is supported"
            )
        if any(not math.isfinite(y) for y in self.observations):
            raise ValueError("observations must be finite")

    @property
    def n_observations(self) -> int:
        return len(self.observations)


def canonicalize(assignment: Sequence[int]) -> tuple[int, ...]:
    """Relabel clusters in order of first appearance."""
    mapping: dict[int, int] = {}
    out = []
    for label in assignment:
        if label not in mapping:
            mapping[label] = len(mapping)
        out.append(mapping[label])
    return tuple(out)


def crp_log_prior(alpha: float, assignment: Sequence[int]) -> float:
    """Sequential seating probability of a canonical assignment."""
    total = 0.0
    counts: dict[int, int] = {}
    for t, label in enumerate(assignment):
        if t == 0:
            if label != 0:
                return -math.inf
        else:
            denom = t + alpha
            if label in counts:
                total += math.log(counts[label] / denom)
            elif label == len(counts):
                total += math.log(alpha / denom)
            else:
                return -math.inf
        counts[label] = counts.get(label, 0) + 1
    return total


def log_predictive(model: DpmModel, members: Sequence[float], y: float) -> float:
    """Collapsed predictive of one draw given its cluster's members."""
    n = len(members)
    prec = 1.0 / model.prior_var + n / model.obs_var
    post_var = 1.0 / prec
    post_mean = post_var * (
        model.prior_mean / model.prior_var + math.fsum(members) / model.obs_var
    )
    var = post_var + model.obs_var
    return -0.5 * (_LOG_2PI + math.log(var) + (y - post_mean) ** 2 / var)


def _cluster_marginal(model: DpmModel, ys: Sequence[float]) -> float:
    """Closed-form marginal of one cluster's observations.

    Covariance is obs_var * I + prior_var * J; determinant and quadratic
    form follow from the rank-one structure.
    """
    n = len(ys)
    dev = [y - model.prior_mean for y in ys]
    s1 = math.fsum(dev)
    s2 = math.fsum(d * d for d in dev)
    ratio = model.prior_var / model.obs_var
    logdet = n * math.log(model.obs_var) + math.log1p(n * ratio)
    quad = (s2 - ratio * s1 * s1 / (model.obs_var + n * model.prior_var)) / model.obs_var
    return -0.5 * (n * _LOG_2PI + logdet + quad)


def dpm_log_joint(model: DpmModel, assignment: Sequence[int]) -> float:
    """Joint of a canonical assignment prefix and its observations.

    Uses the exchangeable partition formula and per-cluster marginals, a
    deliberately different factorization from the sequential chain.
    """
    t = len(assignment)
    if canonicalize(assignment) != tuple(assignment):
        return -math.inf
    clusters: dict[int, list[float]] = {}
    for i, label in enumerate(assignment):
        clusters.setdefault(label, []).append(model.observations[i])
    total = len(clusters) * math.log(model.alpha)
    for members in clusters.values():
        total += math.lgamma(len(members))
    for i in range(t):
        total -= math.log(i + model.alpha)
    for members in clusters.values():
        total += _cluster_marginal(model, members)
    return total


def dpm_as_seqobs(model: DpmModel) -> SeqObsModel:
    alpha = model.alpha

    def sample_local(theta, locs, t, gen: np.random.Generator):
        if t == 0:
            return 0
        counts: dict[int, int] = {}
        for label in locs:
            counts[label] = counts.get(label, 0) + 1
        labels = sorted(counts)
        weights = [counts[c] for c in labels] + [alpha]
        u = gen.random() * math.fsum(weights)
        acc = 0.0
        for label, w in zip(labels + [len(labels)], weights):
            acc += w
            if u < acc:
                return label
        return len(labels)

    def log_local(e, theta, locs, t):
        return crp_log_prior(alpha, tuple(locs) + (e,)) - crp_log_prior(alpha, locs)

    def log_likelihood(t, theta, locs):
        members = [
            model.observations[s] for s in range(t) if locs[s] == locs[t]
        ]
        return log_predictive(model, members, model.observations[t])

    return SeqObsModel(
        n_observations=model.n_observations,
        sample_global=lambda gen: None,
        log_global=lambda theta: 0.0,
        sample_local=sample_local,
        log_local=log_local,
        log_likelihood=log_likelihood,
        log_joint=lambda theta, locs: dpm_log_joint(model, locs),
    )


def enumerate_assignments(t: int):
    """All canonical assignments of t points (restricted growth strings)."""
    if t == 0:
        yield ()
        return
    for prefix in enumerate_assignments(t - 1):
        top = max(prefix) if prefix else -1
        for label in range(top + 2):
            yield prefix + (label,)


def enumerate_assignment_posterior(model: DpmModel, upto: int | None = None) -> DistTable:
    """Exact posterior over canonical assignments of the first points."""
    t = model.n_observations if upto is None else upto
    weights = {
        a: math.exp(dpm_log_joint(model, a)) for a in enumerate_assignments(t)
    }
    return DistTable.from_weights(weights)


def dpm_exact_posterior_sampler(model: DpmModel):
    """Enumerated-posterior sampler; practical for small observation counts."""
    table = enumerate_assignment_posterior(model)
    inner = table.sampler()

    def sample(rng: RngStream):
        return None, inner(rng)

    return sample


def _site_conditional(model: DpmModel, site: int, n_points: int):
    """Full conditional of one assignment site given all the others."""

    def conditional(state):
        theta, locs = state
        if len(locs) != n_points:
            raise ModelConsistencyError(
                f"site conditional built for {n_points} points, state has {len(locs)}"
            )
        others = [(i, locs[i]) for i in range(n_points) if i != site]
        counts: dict[int, int] = {}
        for _, label in others:
            counts[label] = counts.get(label, 0) + 1
        candidates = sorted(counts) + [max(counts, default=-1) + 1]
        y_site = model.observations[site]
        options: dict[tuple, float] = {}
        weights: dict[tuple, float] = {}
        for label in candidates:
            members = [
                model.observations[i] for i, lab in others if lab == label
            ]
            crp_w = counts.get(label, model.alpha)
            w = crp_w * math.exp(log_predictive(model, members, y_site))
            nxt = canonicalize(locs[:site] + (label,) + locs[site + 1 :])
            key = (theta, nxt)
            weights[key] = weights.get(key, 0.0) + w
        total = math.fsum(weights.values())
        for (th, nxt), w in weights.items():
            options[(th, nxt)] = w / total
        return [((th, nxt), p) for (th, nxt), p in options.items()]

    return conditional


def dpm_gibbs_schedule(model: DpmModel, repetitions: int = 1) -> RejuvenationSchedule:
    """Single-site Gibbs sweeps over cluster assignments, one cycle per step."""
    cycles = []
    for t in range(model.n_observations):
        n_points = t + 1
        cycles.append(
            tuple(
                gibbs_site_kernel(
                    site,
                    _site_conditional(model, site, n_points),
                    target_step=t,
                )
                for site in range(n_points)
            )
        )
    return RejuvenationSchedule.uniform(cycles, repetitions)
