"""Sequential-observation SMC with detailed-balance rejuvenation kernels.

Specializes the generic engine to Bayesian models observed one data point
at a time.  The step-t target is the posterior given the first t
observations; the forward kernel applies rejuvenation moves satisfying
detailed balance with respect to the previous target and then extends the
hypothesis by prior-sampling the new local latents; the backward kernel
is the same rejuvenation applied in reverse.  Detailed balance makes the
incremental weights collapse to per-observation likelihoods, and the
final weight to the reciprocal of the model joint.

Rejuvenation is expressed as an ordered cycle of detailed-balance kernels
per step plus a repetition count.  A cycle may run collapsed (the whole
cycle composed into one SMC step, the default) or expanded (one kernel
per plateau step with unit weights and identity resampling); both give
identical log-weights under coupled RNG streams.  Kernels need not be
ergodic: a frozen kernel is a valid cycle entry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .errors import (
    ModelConsistencyError,
    ModelEvaluationError,
    ScheduleTargetError,
    SupportConditionError,
)
from .rng import RngStream
from .smc import InitKernel, Kernel, SmcConfig, SmcStep

#: Sampler states are (theta, locals) pairs: global latents plus the
#: tuple of per-observation local latents seen so far.
State = tuple[Any, tuple[Any, ...]]


@dataclass(frozen=True)
class SeqObsModel:
    """A Bayesian model with global latents, per-observation locals, and
    sequentially revealed observations.

    ``log_joint(theta, locals)`` must equal the chained prior and
    likelihood factors for every point; ``validate_seqobs_model`` checks
    this on random draws.  Observation index ``t`` is 0-based everywhere;
    ``locals`` passed to ``log_likelihood`` has length ``t + 1``.
    """

    n_observations: int
    sample_global: Callable[[np.random.Generator], Any]
    log_global: Callable[[Any], float]
    sample_local: Callable[[Any, tuple, int, np.random.Generator], Any]
    log_local: Callable[[Any, Any, tuple, int], float]
    log_likelihood: Callable[[int, Any, tuple], float]
    log_joint: Callable[[Any, tuple], float]

    def prior_state(self, t: int, gen: np.random.Generator) -> State:
        """Forward-sample (theta, e_0..e_t) from the prior chain."""
        theta = self.sample_global(gen)
        locs: tuple = ()
        for s in range(t + 1):
            locs = locs + (self.sample_local(theta, locs, s, gen),)
        return theta, locs

    def log_step_target(self, t: int, state: State) -> float:
        """Unnormalized step-t target: joint of theta, e_0..e_t, y_0..y_t."""
        theta, locs = state
        total = self.log_global(theta)
        for s in range(t + 1):
            total += self.log_local(locs[s], theta, locs[:s], s)
            total += self.log_likelihood(s, theta, locs[: s + 1])
        return total


def validate_seqobs_model(
    model: SeqObsModel, rng: RngStream, n_draws: int = 20, tol: float = 1e-9
) -> None:
    """Check log_joint against the chained factors on random prior draws."""
    gen = rng.generator()
    for d in range(n_draws):
        theta, locs = model.prior_state(model.n_observations - 1, gen)
        chained = model.log_step_target(model.n_observations - 1, (theta, locs))
        joint = model.log_joint(theta, locs)
        if not math.isfinite(joint) or abs(joint - chained) > tol:
            raise ModelConsistencyError(
                f"log_joint disagrees with chained factors on draw {d}: "
                f"{joint!r} vs {chained!r}"
            )


@dataclass(frozen=True)
class DetailedBalanceKernel:
    """A Markov kernel in detailed balance with a declared target.

    ``step(state, gen)`` performs one move.  ``target_step`` declares the
    0-based observation step whose posterior the kernel targets; schedules
    refuse kernels whose declaration does not match their slot.
    ``transition_prob(x, y)``, when available, is the exact transition
    probability on a discrete space, enabling enumeration checks.
    """

    step: Callable[[State, np.random.Generator], State]
    target_step: int | None = None
    transition_prob: Callable[[State, State], float] | None = None
    label: str = "kernel"


def identity_kernel(target_step: int | None = None) -> DetailedBalanceKernel:
    """The frozen kernel: trivially in detailed balance with any target."""
    return DetailedBalanceKernel(
        step=lambda state, gen: state,
        target_step=target_step,
        transition_prob=lambda x, y: 1.0 if x == y else 0.0,
        label="identity",
    )


@dataclass(frozen=True)
class Proposal:
    """A proposal sampler with an optional density log q(new; given)."""

    sample: Callable[[State, np.random.Generator], State]
    log_density: Callable[[State, State], float] | None = None


def mh_kernel(
    log_target: Callable[[State], float],
    proposal: Proposal,
    symmetric: bool = False,
    enumerable_space: Sequence[State] | None = None,
    target_step: int | None = None,
    label: str = "mh",
) -> DetailedBalanceKernel:
    """One Metropolis-Hastings accept/reject step for the given target.

    Asymmetric proposals must expose their density in both directions; a
    proposed point whose reverse proposal density is zero is an error.
    When ``enumerable_space`` is given (and the proposal has a density),
    exact transition probabilities are attached for enumeration checks.
    """
    if not symmetric and proposal.log_density is None:
        raise ValueError("asymmetric proposals require an evaluable density")

    def log_accept(state: State, prop: State) -> float:
        lt_cur = log_target(state)
        lt_prop = log_target(prop)
        if math.isnan(lt_cur) or math.isnan(lt_prop):
            raise ModelEvaluationError("MH target log-density is NaN")
        if lt_cur == -math.inf:
            raise ModelEvaluationError("MH chain is at a zero-density state")
        log_a = lt_prop - lt_cur
        if not symmetric:
            back = proposal.log_density(state, prop)
            if back == -math.inf and lt_prop > -math.inf:
                raise SupportConditionError(
                    "proposal emitted a state with zero reverse proposal density"
                )
            log_a += back - proposal.log_density(prop, state)
        return log_a

    def step(state: State, gen: np.random.Generator) -> State:
        prop = proposal.sample(state, gen)
        log_a = log_accept(state, prop)
        u = gen.random()
        if log_a >= 0.0 or u < math.exp(log_a):
            return prop
        return state

    transition_prob = None
    if enumerable_space is not None and proposal.log_density is not None:
        space = tuple(enumerable_space)

        def transition_prob(x: State, y: State) -> float:
            def move_prob(target: State) -> float:
                lq = proposal.log_density(target, x)
                if lq == -math.inf:
                    return 0.0
                return math.exp(lq + min(0.0, log_accept(x, target)))

            if y == x:
                stay = 1.0 - math.fsum(move_prob(s) for s in space if s != x)
                return max(stay, 0.0)
            return move_prob(y)

    return DetailedBalanceKernel(
        step=step,
        target_step=target_step,
        transition_prob=transition_prob,
        label=label,
    )


def gibbs_site_kernel(
    site: int,
    conditional: Callable[[State], Sequence[tuple[State, float]]],
    target_step: int | None = None,
    tol: float = 1e-9,
) -> DetailedBalanceKernel:
    """Resample one site from its full conditional.

    ``conditional(state)`` returns the resulting states and their exact
    probabilities when the site is redrawn given everything else; the
    probabilities must sum to 1 within ``tol`` or the kernel errors out.
    Sampling from a full conditional satisfies detailed balance.
    """

    def options(state: State) -> list[tuple[State, float]]:
        opts = list(conditional(state))
        total = math.fsum(p for _, p in opts)
        if abs(total - 1.0) > tol:
            raise ModelConsistencyError(
                f"conditional for site {site} sums to {total!r}, not 1"
            )
        return opts

    def step(state: State, gen: np.random.Generator) -> State:
        opts = options(state)
        u = gen.random()
        acc = 0.0
        for nxt, p in opts:
            acc += p
            if u < acc:
                return nxt
        return opts[-1][0]

    def transition_prob(x: State, y: State) -> float:
        return math.fsum(p for nxt, p in options(x) if nxt == y)

    return DetailedBalanceKernel(
        step=step,
        target_step=target_step,
        transition_prob=transition_prob,
        label=f"gibbs-site-{site}",
    )


@dataclass(frozen=True)
class DetailedBalanceReport:
    """Result of a detailed-balance check over a finite space."""

    method: str
    max_violation: float
    passed: bool
    tol: float | None = None
    alpha: float | None = None
    detail: str = ""


def _normalized_probs(log_target, space) -> list[float]:
    logs = [log_target(x) for x in space]
    m = max(logs)
    if m == -math.inf:
        raise ValueError("target is zero everywhere on the space")
    weights = [math.exp(v - m) for v in logs]
    total = math.fsum(weights)
    return [w / total for w in weights]


def check_detailed_balance(
    kernel: DetailedBalanceKernel,
    log_target: Callable[[State], float],
    space: Sequence[State],
    tol: float = 1e-12,
    n_samples: int = 20000,
    alpha: float = 0.01,
    rng: RngStream | None = None,
) -> DetailedBalanceReport:
    """Measure the worst detailed-balance violation on a finite space.

    With exact transition probabilities the check enumerates all ordered
    pairs and reports max |p(x)P(x->y) - p(y)P(y->x)|.  Without them it
    falls back to an empirical exchangeability test: draws (x, y) pairs
    with x from the target, and binomial-tests each unordered pair's
    direction counts at Bonferroni-corrected level ``alpha``.
    """
    space = tuple(space)
    if len(space) > 1000:
        raise ValueError("space too large to enumerate (max 1000 states)")
    probs = _normalized_probs(log_target, space)

    if kernel.transition_prob is not None:
        worst = 0.0
        for i, x in enumerate(space):
            for j, y in enumerate(space):
                flow_xy = probs[i] * kernel.transition_prob(x, y)
                flow_yx = probs[j] * kernel.transition_prob(y, x)
                worst = max(worst, abs(flow_xy - flow_yx))
        return DetailedBalanceReport(
            method="enumeration", max_violation=worst, passed=worst <= tol, tol=tol
        )

    if rng is None:
        raise ValueError("empirical fallback requires an rng stream")
    gen = rng.generator()
    index = {x: i for i, x in enumerate(space)}
    counts: dict[tuple[int, int], int] = {}
    cumulative = np.cumsum(probs)
    for _ in range(n_samples):
        i = int(np.searchsorted(cumulative, gen.random()))
        y = kernel.step(space[i], gen)
        j = index[y]
        counts[(i, j)] = counts.get((i, j), 0) + 1
    pairs = {(i, j) for i, j in counts if i < j}
    pairs |= {(j, i) for i, j in counts if j < i}
    worst_z = 0.0
    threshold = float("inf")
    if pairs:
        from scipy import stats

        per_pair_alpha = alpha / len(pairs)
        threshold = stats.norm.isf(per_pair_alpha / 2)
        for i, j in pairs:
            n_ij = counts.get((i, j), 0)
            n_ji = counts.get((j, i), 0)
            n_tot = n_ij + n_ji
            if n_tot == 0:
                continue
            z = abs(n_ij - n_tot / 2) / math.sqrt(n_tot / 4)
            worst_z = max(worst_z, z)
    return DetailedBalanceReport(
        method="empirical",
        max_violation=worst_z,
        passed=worst_z <= threshold,
        alpha=alpha,
        detail=f"max |z| over {len(pairs)} pairs, reject beyond {threshold:.3f}",
    )


@dataclass(frozen=True)
class RejuvenationSchedule:
    """Per-step rejuvenation: an ordered kernel cycle and repetition count.

    ``cycles[t]`` holds the kernels applied between the step-t target and
    the next target update (the final entry also forms the output cycle).
    All kernels in cycle t must target step t.
    """

    cycles: tuple[tuple[DetailedBalanceKernel, ...], ...]
    repetitions: tuple[int, ...]

    def __post_init__(self):
        if len(self.repetitions) != len(self.cycles):
            raise ValueError("one repetition count per cycle required")
        if any(r < 0 for r in self.repetitions):
            raise ValueError("repetition counts must be >= 0")
        for t, cycle in enumerate(self.cycles):
            for kernel in cycle:
                if kernel.target_step is not None and kernel.target_step != t:
                    raise ScheduleTargetError(
                        f"kernel {kernel.label!r} targets step {kernel.target_step} "
                        f"but was scheduled at step {t}"
                    )

    @classmethod
    def uniform(
        cls,
        cycles: Sequence[Sequence[DetailedBalanceKernel]],
        repetitions: int = 1,
    ) -> "RejuvenationSchedule":
        return cls(
            cycles=tuple(tuple(c) for c in cycles),
            repetitions=(repetitions,) * len(cycles),
        )

    @property
    def n_steps(self) -> int:
        return len(self.cycles)

    def flattened(self, t: int) -> tuple[DetailedBalanceKernel, ...]:
        """The cycle at step t, repeated."""
        return self.cycles[t] * self.repetitions[t]


def no_rejuvenation(n_steps: int) -> RejuvenationSchedule:
    return RejuvenationSchedule.uniform([()] * n_steps, repetitions=1)


def _apply_cycle(kernels, state, stream: RngStream, indices) -> State:
    for j in indices:
        state = kernels[j].step(state, stream.split(j).generator())
    return state


def cycle_collapse(
    cycle: Sequence[DetailedBalanceKernel], reverse_for_backward: bool = True
) -> tuple[Kernel, Kernel]:
    """Compose a kernel cycle into a forward kernel and its reversal.

    The forward kernel applies the cycle in order; the backward kernel
    applies it in reverse order (the time reversal of the composite with
    respect to the shared target).  Used as a plateau replacement, the
    collapsed step's weight contribution is exactly 1 (log-weight 0.0).
    An empty cycle collapses to identity kernels.
    """
    kernels = tuple(cycle)
    if not kernels:
        ident = Kernel(sample=lambda state, stream: state)
        return ident, ident
    forward_order = tuple(range(len(kernels)))
    backward_order = forward_order[::-1] if reverse_for_backward else forward_order

    def forward(state: State, stream: RngStream) -> State:
        return _apply_cycle(kernels, state, stream, forward_order)

    def backward(state: State, stream: RngStream) -> State:
        return _apply_cycle(kernels, state, stream, backward_order)

    return Kernel(sample=forward), Kernel(sample=backward)


def _plateau_log_weight(prev: State, cur: State) -> float:
    # Unchanged target and a detailed-balance move: the weight is exactly 1.
    return 0.0


def build_seqobs_config(
    model: SeqObsModel,
    schedule: RejuvenationSchedule,
    n_particles: int,
    collapse: bool = True,
) -> SmcConfig:
    """Assemble the SMC config for a sequentially observed model.

    The init kernel prior-samples (theta, e_0) and step 1's weight is the
    first observation's likelihood; step t applies the step-(t-1) cycle
    and extends by prior-sampling e_t with the step-t likelihood as its
    weight; the output kernels run the final cycle forward and reversed,
    with final weight equal to minus the model's log-joint at the output.

    With ``collapse=False``, cycles run expanded: each kernel occupies its
    own plateau step with identity resampling and exact unit weight.  The
    two modes share stream-block keys, so a collapsed and an expanded
    config driven by the same root stream produce identical log-weights
    path by path.
    """
    n_obs = model.n_observations
    if schedule.n_steps != n_obs:
        raise ScheduleTargetError(
            f"schedule covers {schedule.n_steps} steps, model has {n_obs}"
        )

    def init_sample(stream: RngStream) -> State:
        gen = stream.generator()
        theta = model.sample_global(gen)
        return theta, (model.sample_local(theta, (), 0, gen),)

    init = InitKernel(
        sample=init_sample,
        log_density=lambda st: model.log_global(st[0])
        + model.log_local(st[1][0], st[0], (), 0),
    )

    def likelihood_weight(t: int):
        def log_weight(prev: State, cur: State) -> float:
            return model.log_likelihood(t, cur[0], cur[1])

        return log_weight

    def extend_state(state: State, t: int, gen: np.random.Generator) -> State:
        theta, locs = state
        return theta, locs + (model.sample_local(theta, locs, t, gen),)

    steps: list[SmcStep] = []
    for t in range(1, n_obs):
        cyc = schedule.flattened(t - 1)
        n_moves = len(cyc)
        if collapse:

            def fwd_sample(state, stream, _cyc=cyc, _t=t, _m=n_moves):
                state = _apply_cycle(_cyc, state, stream, range(_m))
                return extend_state(state, _t, stream.split(_m).generator())

            def bwd_sample(state, stream, _cyc=cyc, _m=n_moves):
                theta, locs = state
                return _apply_cycle(
                    _cyc, (theta, locs[:-1]), stream, range(_m - 1, -1, -1)
                )

            steps.append(
                SmcStep(
                    forward=Kernel(sample=fwd_sample),
                    backward=Kernel(sample=bwd_sample),
                    log_weight=likelihood_weight(t),
                    multinomial=True,
                    stream_block=t,
                )
            )
        else:
            for j, kernel in enumerate(cyc):

                def plateau_sample(state, stream, _k=kernel, _j=j):
                    return _k.step(state, stream.split(_j).generator())

                plateau = Kernel(sample=plateau_sample)
                steps.append(
                    SmcStep(
                        forward=plateau,
                        backward=plateau,
                        log_weight=_plateau_log_weight,
                        multinomial=(j == 0),
                        stream_block=t,
                    )
                )

            def ext_sample(state, stream, _t=t, _m=n_moves):
                return extend_state(state, _t, stream.split(_m).generator())

            def drop_sample(state, stream):
                theta, locs = state
                return theta, locs[:-1]

            steps.append(
                SmcStep(
                    forward=Kernel(sample=ext_sample),
                    backward=Kernel(sample=drop_sample),
                    log_weight=likelihood_weight(t),
                    multinomial=(n_moves == 0),
                    stream_block=t,
                )
            )

    output_forward, output_backward = cycle_collapse(schedule.flattened(n_obs - 1))

    def output_log_weight(x_final: State, z: State) -> float:
        return -model.log_joint(z[0], z[1])

    return SmcConfig(
        n_particles=n_particles,
        init=init,
        init_log_weight=lambda st: model.log_likelihood(0, st[0], st[1]),
        steps=tuple(steps),
        output_forward=output_forward,
        output_backward=output_backward,
        output_log_weight=output_log_weight,
        output_stream_block=n_obs,
    )


def composite_transition_probs(
    kernels: Sequence[DetailedBalanceKernel],
    space: Sequence[State],
    reverse: bool = False,
) -> dict[tuple[State, State], float]:
    """Exact transition probabilities of a kernel cycle on a finite space."""
    space = tuple(space)
    order = tuple(reversed(kernels)) if reverse else tuple(kernels)
    probs = {(x, y): 1.0 if x == y else 0.0 for x in space for y in space}
    for kernel in order:
        if kernel.transition_prob is None:
            raise ValueError(f"kernel {kernel.label!r} has no exact transitions")
        step = {(x, y): kernel.transition_prob(x, y) for x in space for y in space}
        probs = {
            (x, y): math.fsum(probs[(x, m)] * step[(m, y)] for m in space)
            for x in space
            for y in space
        }
    return probs


class McmcReferenceSampler:
    """Gold-standard approximate reference: a long chain of the final
    rejuvenation cycle targeting the full posterior.

    Stateful: each call advances the chain by ``thinning`` cycle sweeps
    (after a one-time ``burn_in``) and returns the current state.  Calls
    must be sequential; results labeled with this reference are only
    subjectively valid.
    """

    def __init__(
        self,
        model: SeqObsModel,
        kernels: Sequence[DetailedBalanceKernel],
        burn_in: int = 100,
        thinning: int = 10,
    ):
        if not kernels:
            raise ValueError("an MCMC reference needs at least one kernel")
        if burn_in < 0 or thinning < 1:
            raise ValueError("burn_in must be >= 0 and thinning >= 1")
        self._model = model
        self._kernels = tuple(kernels)
        self._burn_in = burn_in
        self._thinning = thinning
        self._state: State | None = None

    def _sweep(self, state: State, stream: RngStream) -> State:
        for j, kernel in enumerate(self._kernels):
            state = kernel.step(state, stream.split(j).generator())
        return state

    def __call__(self, rng: RngStream) -> State:
        if self._state is None:
            gen = rng.split(0).generator()
            self._state = self._model.prior_state(
                self._model.n_observations - 1, gen
            )
            for b in range(self._burn_in):
                self._state = self._sweep(self._state, rng.split(1, b))
        for s in range(self._thinning):
            self._state = self._sweep(self._state, rng.split(2, s))
        return self._state
