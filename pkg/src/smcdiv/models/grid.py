"""Tiny fully-tabular discrete model used as an enumeration substrate.

A grid model is a chain with at most two observations over at most three
states: an explicit prior table, a transition table, and one positive
likelihood table per observation.  Every kernel of the derived SMC config
exposes its exact density, so traced executions can be scored and the
whole path space can be enumerated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

from ..rng import RngStream
from ..smc import InitKernel, Kernel, SmcConfig, SmcStep

_NORM_TOL = 1e-12


def _check_row(row, name):
    if any(p <= 0.0 for p in row):
        raise ValueError(f"{name} entries must be strictly positive")
    if abs(math.fsum(row) - 1.0) > _NORM_TOL:
        raise ValueError(f"{name} must sum to 1 within {_NORM_TOL}")


@dataclass(frozen=True, eq=False)
class GridModel:
    prior: tuple[float, ...]
    transition: tuple[tuple[float, ...], ...]
    likelihoods: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        k = len(self.prior)
        if not 1 <= k <= 3:
            raise ValueError("grid models support at most 3 states")
        if not 1 <= len(self.likelihoods) <= 2:
            raise ValueError("grid models support 1 or 2 observations")
        _check_row(self.prior, "prior")
        if len(self.transition) != k or any(len(r) != k for r in self.transition):
            raise ValueError("transition table must be KxK")
        for s, row in enumerate(self.transition):
            _check_row(row, f"transition row {s}")
        for t, row in enumerate(self.likelihoods):
            if len(row) != k:
                raise ValueError(f"likelihood table {t} must have K entries")
            if any(p <= 0.0 for p in row):
                raise ValueError(f"likelihood table {t} must be strictly positive")

    @property
    def n_states(self) -> int:
        return len(self.prior)

    @property
    def n_observations(self) -> int:
        return len(self.likelihoods)

    @cached_property
    def unnorm_targets(self) -> tuple[tuple[float, ...], ...]:
        """Per-step unnormalized target tables, built by forward recursion."""
        first = tuple(p * l for p, l in zip(self.prior, self.likelihoods[0]))
        tables = [first]
        if self.n_observations == 2:
            k = self.n_states
            filtered = tuple(
                math.fsum(first[s] * self.transition[s][s2] for s in range(k))
                for s2 in range(k)
            )
            tables.append(
                tuple(f * l for f, l in zip(filtered, self.likelihoods[1]))
            )
        return tuple(tables)

    @cached_property
    def backward_table(self) -> tuple[tuple[float, ...], ...]:
        """Backward kernel rows b[s2][s1], the step-1 conditional given s2."""
        k = self.n_states
        first = self.unnorm_targets[0]
        rows = []
        for s2 in range(k):
            joint = [first[s1] * self.transition[s1][s2] for s1 in range(k)]
            norm = math.fsum(joint)
            rows.append(tuple(j / norm for j in joint))
        return tuple(rows)

    def output_table(self, smoothing: float) -> tuple[tuple[float, ...], ...]:
        """Output kernel rows: identity mixed with a uniform (symmetric)."""
        if not 0.0 <= smoothing < 1.0:
            raise ValueError("smoothing must be in [0, 1)")
        k = self.n_states
        return tuple(
            tuple(
                (1.0 - smoothing) * (1.0 if s == s2 else 0.0) + smoothing / k
                for s2 in range(k)
            )
            for s in range(k)
        )

    def posterior_table(self) -> tuple[float, ...]:
        final = self.unnorm_targets[-1]
        norm = math.fsum(final)
        return tuple(v / norm for v in final)


def _log(p: float) -> float:
    return math.log(p) if p > 0.0 else -math.inf


def _sample_row(row, gen) -> int:
    u = gen.random()
    acc = 0.0
    for i, p in enumerate(row):
        acc += p
        if u < acc:
            return i
    return len(row) - 1


def _table_kernel(table) -> Kernel:
    def sample(state, rng: RngStream):
        return _sample_row(table[state], rng.generator())

    def log_density(sampled, given):
        return _log(table[given][sampled])

    return Kernel(sample=sample, log_density=log_density)


def grid_as_config(
    model: GridModel, n_particles: int, output_smoothing: float = 0.0
) -> SmcConfig:
    """Build the SMC config whose kernels all expose exact densities.

    The init kernel is the prior, the forward kernel the transition table,
    the backward kernel the exact one-step conditional, and the output
    kernel the (optionally smoothed) identity.  Weight functions are the
    generic target/kernel ratios evaluated from the tables.
    """
    prior = model.prior
    targets = model.unnorm_targets
    out_tbl = model.output_table(output_smoothing)

    def init_sample(rng: RngStream):
        return _sample_row(prior, rng.generator())

    init = InitKernel(sample=init_sample, log_density=lambda s: _log(prior[s]))

    def init_log_weight(s):
        return _log(targets[0][s]) - _log(prior[s])

    steps = []
    if model.n_observations == 2:
        fwd = _table_kernel(model.transition)
        bwd = _table_kernel(model.backward_table)

        def step_log_weight(s_prev, s_cur):
            num = targets[1][s_cur] * model.backward_table[s_cur][s_prev]
            den = targets[0][s_prev] * model.transition[s_prev][s_cur]
            if num <= 0.0:
                return -math.inf
            return math.log(num) - math.log(den)

        steps.append(SmcStep(forward=fwd, backward=bwd, log_weight=step_log_weight))

    out_kernel = _table_kernel(out_tbl)

    def output_log_weight(s_final, z):
        fwd_p = out_tbl[s_final][z]
        bwd_p = out_tbl[z][s_final]
        if fwd_p <= 0.0 or bwd_p <= 0.0:
            return -math.inf
        return math.log(bwd_p) - math.log(targets[-1][s_final]) - math.log(fwd_p)

    return SmcConfig(
        n_particles=n_particles,
        init=init,
        init_log_weight=init_log_weight,
        steps=tuple(steps),
        output_forward=out_kernel,
        output_backward=out_kernel,
        output_log_weight=output_log_weight,
    )


def grid_log_unnorm_posterior(model: GridModel):
    """The final unnormalized target as a callable over states."""
    final = model.unnorm_targets[-1]

    def log_prob(s: int) -> float:
        return _log(final[s])

    return log_prob


def grid_exact_posterior_sampler(model: GridModel):
    """Exact posterior sampler over the final state space."""
    table = model.posterior_table()

    def sample(rng: RngStream) -> int:
        return _sample_row(table, rng.generator())

    return sample


def uniform_two_state(n_observations: int = 1) -> GridModel:
    """The smallest interesting grid: two states, everything uniform."""
    return GridModel(
        prior=(0.5, 0.5),
        transition=((0.5, 0.5), (0.5, 0.5)),
        likelihoods=tuple((1.0, 1.0) for _ in range(n_observations)),
    )


def skewed_three_state() -> GridModel:
    """A 3-state, 2-observation grid with deliberately uneven tables."""
    return GridModel(
        prior=(0.5, 0.3, 0.2),
        transition=(
            (0.6, 0.3, 0.1),
            (0.2, 0.5, 0.3),
            (0.25, 0.25, 0.5),
        ),
        likelihoods=(
            (0.9, 0.4, 0.15),
            (0.2, 0.5, 0.95),
        ),
    )
