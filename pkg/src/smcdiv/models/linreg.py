"""Bayesian linear regression with a conjugate Gaussian posterior.

Known noise variance and a Gaussian prior over the weights keep the
posterior and the marginal likelihood in closed form, so the model can
serve as an exact reference for divergence-bound estimation.  There are
no local latents; the sequential-observation state carries a ``None``
placeholder per observation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import stats

from ..rng import RngStream
from ..seqobs import Proposal, RejuvenationSchedule, SeqObsModel, mh_kernel

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class LinRegModel:
    design: tuple[tuple[float, ...], ...]
    observations: tuple[float, ...]
    prior_mean: tuple[float, ...]
    prior_cov: tuple[tuple[float, ...], ...]
    noise_var: float

    def __post_init__(self):
        if len(self.design) != len(self.observations):
            raise ValueError("design and observations must have equal length")
        d = len(self.prior_mean)
        if any(len(x) != d for x in self.design):
            raise ValueError("design rows must match the prior dimension")
        if self.noise_var <= 0.0:
            raise ValueError("noise variance must be positive")
        try:
            np.linalg.cholesky(np.asarray(self.prior_cov))
        except np.linalg.LinAlgError as exc:
            raise ValueError("prior covariance must be positive definite") from exc

    @property
    def n_observations(self) -> int:
        return len(self.observations)

    @property
    def dim(self) -> int:
        return len(self.prior_mean)

    @cached_property
    def _prior_chol(self) -> np.ndarray:
        return np.linalg.cholesky(np.asarray(self.prior_cov))

    @cached_property
    def _prior_prec(self) -> np.ndarray:
        return np.linalg.inv(np.asarray(self.prior_cov))

    def log_prior(self, theta) -> float:
        d = np.asarray(theta) - np.asarray(self.prior_mean)
        sol = np.linalg.solve(self._prior_chol, d)
        logdet = 2.0 * math.fsum(math.log(v) for v in np.diag(self._prior_chol))
        return -0.5 * (self.dim * _LOG_2PI + logdet + float(sol @ sol))

    def log_obs_likelihood(self, t: int, theta) -> float:
        resid = self.observations[t] - float(
            np.dot(self.design[t], np.asarray(theta))
        )
        return -0.5 * (_LOG_2PI + math.log(self.noise_var) + resid**2 / self.noise_var)


def linreg_posterior(model: LinRegModel, upto: int | None = None):
    """Posterior mean and covariance given the first ``upto`` observations."""
    t = model.n_observations if upto is None else upto
    x = np.asarray(model.design[:t], dtype=float).reshape(t, model.dim)
    y = np.asarray(model.observations[:t], dtype=float)
    prec = model._prior_prec + x.T @ x / model.noise_var
    cov = np.linalg.inv(prec)
    mean = cov @ (
        model._prior_prec @ np.asarray(model.prior_mean) + x.T @ y / model.noise_var
    )
    return mean, cov


def linreg_log_evidence(model: LinRegModel, upto: int | None = None) -> float:
    """Exact log marginal likelihood of the first ``upto`` observations."""
    t = model.n_observations if upto is None else upto
    if t == 0:
        return 0.0
    x = np.asarray(model.design[:t], dtype=float).reshape(t, model.dim)
    y = np.asarray(model.observations[:t], dtype=float)
    mean = x @ np.asarray(model.prior_mean)
    cov = x @ np.asarray(model.prior_cov) @ x.T + model.noise_var * np.eye(t)
    return float(stats.multivariate_normal.logpdf(y, mean=mean, cov=cov))


def linreg_exact_posterior_sampler(model: LinRegModel):
    """Draws sequential-observation states from the exact posterior."""
    mean, cov = linreg_posterior(model)
    chol = np.linalg.cholesky(cov)
    placeholder = (None,) * model.n_observations

    def sample(rng: RngStream):
        gen = rng.generator()
        theta = mean + chol @ gen.standard_normal(model.dim)
        return tuple(float(v) for v in theta), placeholder

    return sample


def linreg_as_seqobs(model: LinRegModel) -> SeqObsModel:
    def sample_global(gen: np.random.Generator):
        theta = np.asarray(model.prior_mean) + model._prior_chol @ gen.standard_normal(
            model.dim
        )
        return tuple(float(v) for v in theta)

    def log_joint(theta, locs) -> float:
        total = model.log_prior(theta)
        for t in range(len(locs)):
            total += model.log_obs_likelihood(t, theta)
        return total

    return SeqObsModel(
        n_observations=model.n_observations,
        sample_global=sample_global,
        log_global=model.log_prior,
        sample_local=lambda theta, locs, t, gen: None,
        log_local=lambda e, theta, locs, t: 0.0,
        log_likelihood=lambda t, theta, locs: model.log_obs_likelihood(t, theta),
        log_joint=log_joint,
    )


def _step_target(model: LinRegModel, t: int):
    def log_target(state) -> float:
        theta = state[0]
        total = model.log_prior(theta)
        for s in range(t + 1):
            total += model.log_obs_likelihood(s, theta)
        return total

    return log_target


def linreg_rw_schedule(
    model: LinRegModel, step_size: float = 0.5, repetitions: int = 1
) -> RejuvenationSchedule:
    """Random-walk MH rejuvenation over the weights, one kernel per step."""
    dim = model.dim

    def make_kernel(t: int):
        def propose(state, gen: np.random.Generator):
            theta, locs = state
            moved = tuple(
                v + step_size * z for v, z in zip(theta, gen.standard_normal(dim))
            )
            return moved, locs

        return mh_kernel(
            _step_target(model, t),
            Proposal(sample=propose),
            symmetric=True,
            target_step=t,
            label=f"rw-step{t}",
        )

    return RejuvenationSchedule.uniform(
        [(make_kernel(t),) for t in range(model.n_observations)], repetitions
    )


def linreg_imh_schedule(
    model: LinRegModel, repetitions: int = 1
) -> RejuvenationSchedule:
    """Independent MH rejuvenation proposing fresh weights from the prior."""

    def make_kernel(t: int):
        def propose(state, gen: np.random.Generator):
            theta = np.asarray(model.prior_mean) + model._prior_chol @ (
                gen.standard_normal(model.dim)
            )
            return tuple(float(v) for v in theta), state[1]

        def log_density(new, given):
            return model.log_prior(new[0])

        return mh_kernel(
            _step_target(model, t),
            Proposal(sample=propose, log_density=log_density),
            symmetric=False,
            target_step=t,
            label=f"imh-step{t}",
        )

    return RejuvenationSchedule.uniform(
        [(make_kernel(t),) for t in range(model.n_observations)], repetitions
    )


def default_design(n_observations: int, dim: int = 2) -> tuple[tuple[float, ...], ...]:
    """Intercept-and-slope design on an evenly spaced unit grid."""
    if dim not in (1, 2):
        raise ValueError("default designs support dim 1 or 2")
    denom = max(n_observations - 1, 1)
    if dim == 1:
        return tuple((t / denom,) for t in range(n_observations))
    return tuple((1.0, t / denom) for t in range(n_observations))
