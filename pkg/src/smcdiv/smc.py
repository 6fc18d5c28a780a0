"""Generic SMC sampler engine with a paired regeneration sampler.

``smc_simulate`` runs a sequential Monte Carlo sampler with independent
multinomial resampling over a sequence of unnormalized targets, forward
kernels, backward kernels, and incremental weight functions, and returns
its output point together with the log-ratio log(p(u, z) / q(u; z)) of
the run, which simplifies to

    -( log w_out + sum_t logmeanexp(w_t^1..w_t^N) )

where w_out is the final single-particle weight and w_t are the per-step
particle weights.  ``smc_regenerate`` is the matching meta-inference
sampler: given only an output point, it draws an ancestral lineage
uniformly at random, reconstructs ancestral particle values by sampling
the backward kernels in reverse, re-runs the forward sweep conditioned on
that lineage, and returns the same log-weight expression.  This mirrors a
conditional-SMC update, except that only an output particle, not a full
trajectory, is required.

Traced variants record every auxiliary choice; for configs whose kernels
expose exact densities (discrete models), ``p_joint_log_prob`` and
``q_joint_log_prob`` score a trace under the two joint distributions so
the log-weight identity can be verified run by run.

Steps may be flagged as plateau steps (``multinomial=False``): the target
is unchanged, the incremental weight is identically 1, ancestor draws are
replaced by the identity, and the regeneration lineage index is copied
from the previous step.  This supports running cycles of rejuvenation
kernels either expanded one kernel per step or collapsed into composite
kernels, with identical results under coupled RNG streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .core import SamplerPackage
from .errors import (
    HistoryShapeError,
    ModelEvaluationError,
    SupportConditionError,
    WeightCollapseError,
)
from .logspace import logmeanexp, logsumexp
from .rng import RngStream

State = Any

# Stream purposes: first split index under an engine call's root stream.
_INIT, _ANCESTORS, _FORWARD, _BACKWARD, _LINEAGE = 0, 1, 2, 3, 4


@dataclass(frozen=True)
class Kernel:
    """A sampling kernel with an optional exact transition density.

    ``sample(state, rng)`` draws the next state; composite kernels may
    split the stream internally.  ``log_density(sampled, given)``, when
    available, evaluates log k(sampled; given); discrete configs supply it
    so executions can be scored exactly.
    """

    sample: Callable[[State, RngStream], State]
    log_density: Callable[[State, State], float] | None = None


@dataclass(frozen=True)
class InitKernel:
    """The step-1 kernel: an unconditional sampler over the first space."""

    sample: Callable[[RngStream], State]
    log_density: Callable[[State], float] | None = None


@dataclass(frozen=True)
class SmcStep:
    """One intermediate step: resample ancestors, move forward, reweight.

    ``log_weight(prev, cur)`` evaluates the incremental log-weight for a
    move from ``prev`` to ``cur``.  ``multinomial=False`` marks a plateau
    step.  ``stream_block`` keys this step's randomness; steps of the same
    logical block in expanded and collapsed configs share a block id so
    coupled runs consume identical streams.  Defaults to the step's
    position.
    """

    forward: Kernel
    backward: Kernel
    log_weight: Callable[[State, State], float]
    multinomial: bool = True
    stream_block: int | None = None


@dataclass(frozen=True)
class SmcConfig:
    """Full specification of an SMC sampler and its regeneration pair.

    The support condition — forward and backward kernels positive on
    exactly the same transitions — is assumed, and spot-checked at runtime
    wherever kernel densities are available.
    """

    n_particles: int
    init: InitKernel
    init_log_weight: Callable[[State], float]
    steps: tuple[SmcStep, ...]
    output_forward: Kernel
    output_backward: Kernel
    output_log_weight: Callable[[State, State], float]
    output_stream_block: int | None = None

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError(f"n_particles must be >= 1, got {self.n_particles}")

    @property
    def n_steps(self) -> int:
        """Number of weighted steps (the init step counts as step 1)."""
        return len(self.steps) + 1

    def _block(self, position: int) -> int:
        step = self.steps[position]
        return position + 1 if step.stream_block is None else step.stream_block

    def _output_block(self) -> int:
        if self.output_stream_block is not None:
            return self.output_stream_block
        return len(self.steps) + 1

    def _final_block(self) -> int:
        """Block keying the output-particle selection draw."""
        return self._block(len(self.steps) - 1) if self.steps else 0


@dataclass(frozen=True)
class ExecutionHistory:
    """Every auxiliary random choice of one SMC execution.

    Particle, ancestor, and lineage indices are 0-based.  ``lineage[t]``
    is the index of the particle at step t on the ancestral path of the
    output; consistency requires ``ancestors[t][lineage[t + 1]] ==
    lineage[t]``.
    """

    particles: tuple[tuple[State, ...], ...]
    ancestors: tuple[tuple[int, ...], ...]
    lineage: tuple[int, ...]
    log_weights: tuple[tuple[float, ...], ...]
    final_log_weight: float

    def lineage_consistent(self) -> bool:
        return all(
            self.ancestors[t][self.lineage[t + 1]] == self.lineage[t]
            for t in range(len(self.ancestors))
        )


def rand_ancestry(
    n_particles: int, n_steps: int, rng: np.random.Generator
) -> tuple[int, ...]:
    """Draw a lineage: one independent uniform index per step."""
    if n_particles < 1 or n_steps < 1:
        raise ValueError("n_particles and n_steps must be >= 1")
    return tuple(int(rng.integers(n_particles)) for _ in range(n_steps))


def categorical_from_logweights(
    logw: list[float] | tuple[float, ...], rng: np.random.Generator
) -> int:
    """Sample an index with probability proportional to exp(logw).

    Entries of -inf get probability exactly 0; an all--inf vector is a
    weight collapse.
    """
    if len(logw) == 0:
        raise ValueError("empty weight vector")
    m = -math.inf
    for w in logw:
        if math.isnan(w):
            raise ModelEvaluationError("NaN entry in weight vector")
        if w > m:
            m = w
    if m == -math.inf:
        raise WeightCollapseError("all weights are zero")
    probs = [math.exp(w - m) for w in logw]
    u = rng.random() * math.fsum(probs)
    acc = 0.0
    last_positive = 0
    for i, p in enumerate(probs):
        if p > 0.0:
            last_positive = i
            acc += p
            if u < acc:
                return i
    return last_positive


def _checked_weight(value: float, where: str) -> float:
    if math.isnan(value):
        raise ModelEvaluationError(f"weight is NaN at {where}")
    if value == math.inf:
        raise ModelEvaluationError(f"weight is +inf at {where}")
    return value


def _step_logmeanexp(weights: list[float], step_label: str) -> float:
    lme = logmeanexp(weights)
    if lme == -math.inf:
        raise WeightCollapseError(f"all particle weights zero at {step_label}")
    return lme


def _check_forward_support(step: SmcStep, parent: State, child: State) -> None:
    # Sampled child must be reachable backward; spot-check where evaluable.
    if step.backward.log_density is not None:
        if step.backward.log_density(parent, child) == -math.inf:
            raise SupportConditionError(
                f"forward kernel emitted a state with zero backward density: "
                f"{parent!r} -> {child!r}"
            )


def _check_backward_support(forward: Kernel, given: State, sampled: State) -> None:
    if forward.log_density is not None:
        if forward.log_density(given, sampled) == -math.inf:
            raise SupportConditionError(
                f"backward kernel emitted a state with zero forward density: "
                f"{sampled!r} -> {given!r}"
            )


def _run_forward(
    cfg: SmcConfig,
    root: RngStream,
    lineage: tuple[int, ...] | None,
    lineage_states: list[State] | None,
    trace: bool,
):
    """Shared forward sweep for simulate (lineage None) and regenerate.

    Returns (particles_by_step, ancestors, weight_tables, log_weight_total)
    where the by-step structures are only retained when tracing (the
    untraced path keeps O(N) state), except the final particle row, which
    is always returned.
    """
    n = cfg.n_particles
    conditioned = lineage is not None

    init_stream = root.split(_INIT)
    row: list[State] = []
    for i in range(n):
        if conditioned and i == lineage[0]:
            row.append(lineage_states[0])
        else:
            row.append(cfg.init.sample(init_stream.split(i)))
    weights = [
        _checked_weight(cfg.init_log_weight(x), f"step 1, particle {i}")
        for i, x in enumerate(row)
    ]
    total = _step_logmeanexp(weights, "step 1")

    all_rows = [tuple(row)] if trace else None
    all_weights = [tuple(weights)] if trace else None
    all_ancestors: list[tuple[int, ...]] = []

    for pos, step in enumerate(cfg.steps):
        block = cfg._block(pos)
        t_index = pos + 1
        anc_gen = (
            root.split(_ANCESTORS, block).generator() if step.multinomial else None
        )
        fwd_base = root.split(_FORWARD, block)
        new_row: list[State] = []
        new_weights: list[float] = []
        ancestors: list[int] = []
        for i in range(n):
            if conditioned and i == lineage[t_index]:
                a = lineage[t_index - 1]
                x = lineage_states[t_index]
            else:
                if step.multinomial:
                    a = categorical_from_logweights(weights, anc_gen)
                else:
                    a = i
                x = step.forward.sample(row[a], fwd_base.split(i))
                _check_forward_support(step, row[a], x)
            ancestors.append(a)
            new_row.append(x)
            new_weights.append(
                _checked_weight(
                    step.log_weight(row[a], x), f"step {t_index + 1}, particle {i}"
                )
            )
        total += _step_logmeanexp(new_weights, f"step {t_index + 1}")
        row, weights = new_row, new_weights
        all_ancestors.append(tuple(ancestors))
        if trace:
            all_rows.append(tuple(row))
            all_weights.append(tuple(weights))

    return row, weights, all_rows, all_ancestors, all_weights, total


def _simulate(cfg: SmcConfig, root: RngStream, trace: bool):
    row, weights, all_rows, all_ancestors, all_weights, total = _run_forward(
        cfg, root, None, None, trace
    )
    out_gen = root.split(_LINEAGE, cfg._final_block()).generator()
    i_final = categorical_from_logweights(weights, out_gen)
    out_stream = root.split(_FORWARD, cfg._output_block())
    z = cfg.output_forward.sample(row[i_final], out_stream)
    if cfg.output_backward.log_density is not None:
        if cfg.output_backward.log_density(row[i_final], z) == -math.inf:
            raise SupportConditionError(
                "output kernel emitted a state with zero backward density"
            )
    w_out = _checked_weight(cfg.output_log_weight(row[i_final], z), "output step")
    if w_out == -math.inf:
        raise SupportConditionError("output weight is zero at the sampled pair")
    logw = -(w_out + total)

    hist = None
    if trace:
        lineage = [0] * cfg.n_steps
        lineage[-1] = i_final
        for t in range(cfg.n_steps - 2, -1, -1):
            lineage[t] = all_ancestors[t][lineage[t + 1]]
        hist = ExecutionHistory(
            particles=tuple(all_rows),
            ancestors=tuple(all_ancestors),
            lineage=tuple(lineage),
            log_weights=tuple(all_weights),
            final_log_weight=w_out,
        )
    return z, logw, hist


def _regenerate(cfg: SmcConfig, z: State, root: RngStream, trace: bool):
    n, n_steps = cfg.n_particles, cfg.n_steps

    # Lineage: uniform per step, except plateau steps copy the previous index.
    lineage = [0] * n_steps
    for t in range(n_steps):
        if t == 0 or cfg.steps[t - 1].multinomial:
            block = 0 if t == 0 else cfg._block(t - 1)
            gen = root.split(_LINEAGE, block).generator()
            lineage[t] = int(gen.integers(n))
        else:
            lineage[t] = lineage[t - 1]

    # Ancestral states, backward from the output.
    states: list[State] = [None] * n_steps
    x = cfg.output_backward.sample(z, root.split(_BACKWARD, cfg._output_block()))
    _check_backward_support(cfg.output_forward, z, x)
    states[n_steps - 1] = x
    for t in range(n_steps - 2, -1, -1):
        step = cfg.steps[t]
        x = step.backward.sample(states[t + 1], root.split(_BACKWARD, cfg._block(t)))
        _check_backward_support(step.forward, states[t + 1], x)
        states[t] = x

    row, weights, all_rows, all_ancestors, all_weights, total = _run_forward(
        cfg, root, tuple(lineage), states, trace
    )
    w_out = _checked_weight(
        cfg.output_log_weight(states[n_steps - 1], z), "output step"
    )
    if w_out == -math.inf:
        raise SupportConditionError("output weight is zero at the regenerated pair")
    logw = -(w_out + total)

    hist = None
    if trace:
        hist = ExecutionHistory(
            particles=tuple(all_rows),
            ancestors=tuple(all_ancestors),
            lineage=tuple(lineage),
            log_weights=tuple(all_weights),
            final_log_weight=w_out,
        )
    return logw, hist


def smc_simulate(cfg: SmcConfig, rng: RngStream) -> tuple[State, float]:
    """Run the sampler; return its output point and log(p(u,z)/q(u;z))."""
    z, logw, _ = _simulate(cfg, rng, trace=False)
    return z, logw


def smc_simulate_traced(
    cfg: SmcConfig, rng: RngStream
) -> tuple[State, float, ExecutionHistory]:
    """As ``smc_simulate``, additionally recording every auxiliary choice."""
    return _simulate(cfg, rng, trace=True)


def smc_regenerate(cfg: SmcConfig, z: State, rng: RngStream) -> float:
    """Sample an execution history for output ``z``; return its log-weight."""
    logw, _ = _regenerate(cfg, z, rng, trace=False)
    return logw


def smc_regenerate_traced(
    cfg: SmcConfig, z: State, rng: RngStream
) -> tuple[float, ExecutionHistory]:
    """As ``smc_regenerate``, additionally recording every auxiliary choice."""
    return _regenerate(cfg, z, rng, trace=True)


def as_sampler_package(cfg: SmcConfig) -> SamplerPackage:
    """Bundle a config's simulate/regenerate pair as a SamplerPackage."""
    return SamplerPackage(
        simulate=lambda rng: smc_simulate(cfg, rng),
        regenerate=lambda z, rng: smc_regenerate(cfg, z, rng),
    )


def _require_densities(cfg: SmcConfig) -> None:
    missing = []
    if cfg.init.log_density is None:
        missing.append("init")
    for pos, step in enumerate(cfg.steps):
        if step.forward.log_density is None:
            missing.append(f"step {pos + 2} forward")
        if step.backward.log_density is None:
            missing.append(f"step {pos + 2} backward")
    if cfg.output_forward.log_density is None:
        missing.append("output forward")
    if cfg.output_backward.log_density is None:
        missing.append("output backward")
    if missing:
        raise ValueError(
            "joint scoring requires exact kernel densities; missing: "
            + ", ".join(missing)
        )


def _check_history_shape(cfg: SmcConfig, hist: ExecutionHistory) -> None:
    n, n_steps = cfg.n_particles, cfg.n_steps
    if len(hist.particles) != n_steps or any(len(r) != n for r in hist.particles):
        raise HistoryShapeError("particle table shape mismatch")
    if len(hist.ancestors) != n_steps - 1 or any(
        len(r) != n for r in hist.ancestors
    ):
        raise HistoryShapeError("ancestor table shape mismatch")
    if len(hist.lineage) != n_steps:
        raise HistoryShapeError("lineage length mismatch")
    for r in hist.ancestors:
        if any(not 0 <= a < n for a in r):
            raise HistoryShapeError("ancestor index out of range")
    if any(not 0 <= i < n for i in hist.lineage):
        raise HistoryShapeError("lineage index out of range")


def _recomputed_weights(cfg: SmcConfig, hist: ExecutionHistory) -> list[list[float]]:
    tables = [[cfg.init_log_weight(x) for x in hist.particles[0]]]
    for pos, step in enumerate(cfg.steps):
        prev, cur = hist.particles[pos], hist.particles[pos + 1]
        anc = hist.ancestors[pos]
        tables.append(
            [step.log_weight(prev[anc[i]], cur[i]) for i in range(cfg.n_particles)]
        )
    return tables


def p_joint_log_prob(cfg: SmcConfig, hist: ExecutionHistory, z: State) -> float:
    """Exact log-probability of a traced run under the sampler's joint.

    The joint factorizes as the init densities of every particle, then per
    step the multinomial resampling probability and forward kernel density
    of every particle, then the output selection probability and output
    kernel density.  Plateau steps contribute no resampling factor; a
    history whose plateau ancestors are not the identity has probability
    zero.  -inf is a legal return (impossible history).
    """
    _require_densities(cfg)
    _check_history_shape(cfg, hist)
    n = cfg.n_particles
    weights = _recomputed_weights(cfg, hist)

    lp = math.fsum(cfg.init.log_density(x) for x in hist.particles[0])
    for pos, step in enumerate(cfg.steps):
        prev, cur = hist.particles[pos], hist.particles[pos + 1]
        anc = hist.ancestors[pos]
        if step.multinomial:
            norm = logsumexp(weights[pos])
            for i in range(n):
                if weights[pos][anc[i]] == -math.inf:
                    return -math.inf
                lp += weights[pos][anc[i]] - norm
        else:
            if any(anc[i] != i for i in range(n)):
                return -math.inf
        for i in range(n):
            lp += step.forward.log_density(cur[i], prev[anc[i]])
    i_final = hist.lineage[-1]
    final_weights = weights[-1]
    if final_weights[i_final] == -math.inf:
        return -math.inf
    lp += final_weights[i_final] - logsumexp(final_weights)
    lp += cfg.output_forward.log_density(z, hist.particles[-1][i_final])
    return lp


def q_joint_log_prob(cfg: SmcConfig, hist: ExecutionHistory, z: State) -> float:
    """Exact log-probability of a traced run under the regeneration joint.

    The joint factorizes as the uniform lineage draws, the backward kernel
    densities along the lineage, and the init/resampling/forward factors of
    every off-lineage particle.  Histories violating lineage consistency,
    or plateau lineage copying, have probability zero.
    """
    _require_densities(cfg)
    _check_history_shape(cfg, hist)
    n = cfg.n_particles
    lineage = hist.lineage

    # Lineage feasibility under the modified ancestry for plateau steps.
    for pos, step in enumerate(cfg.steps):
        if hist.ancestors[pos][lineage[pos + 1]] != lineage[pos]:
            return -math.inf
        if not step.multinomial and lineage[pos + 1] != lineage[pos]:
            return -math.inf

    n_free = 1 + sum(1 for step in cfg.steps if step.multinomial)
    lq = -n_free * math.log(n)

    lq += cfg.output_backward.log_density(hist.particles[-1][lineage[-1]], z)
    for pos in range(len(cfg.steps) - 1, -1, -1):
        step = cfg.steps[pos]
        lq += step.backward.log_density(
            hist.particles[pos][lineage[pos]], hist.particles[pos + 1][lineage[pos + 1]]
        )

    weights = _recomputed_weights(cfg, hist)
    for i in range(n):
        if i != lineage[0]:
            lq += cfg.init.log_density(hist.particles[0][i])
    for pos, step in enumerate(cfg.steps):
        prev, cur = hist.particles[pos], hist.particles[pos + 1]
        anc = hist.ancestors[pos]
        norm = logsumexp(weights[pos]) if step.multinomial else None
        for i in range(n):
            if i == lineage[pos + 1]:
                continue
            if step.multinomial:
                if weights[pos][anc[i]] == -math.inf:
                    return -math.inf
                lq += weights[pos][anc[i]] - norm
            elif anc[i] != i:
                return -math.inf
            lq += step.forward.log_density(cur[i], prev[anc[i]])
    return lq
