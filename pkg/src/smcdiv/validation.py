"""Self-check battery: every derived identity verified against an oracle.

Each check returns a :class:`CheckResult` with the measured value and its
tolerance.  The CLI ``validate`` command runs the battery at desk scale;
the acceptance test suite runs the same identities at full scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

from .core import estimate_elbo, estimate_eubo, estimate_kl_bound, tractable_adapter
from .logspace import logmeanexp
from .models.datasets import load_observations
from .models.dpm import (
    DpmModel,
    dpm_as_seqobs,
    dpm_gibbs_schedule,
    enumerate_assignments,
)
from .models.grid import (
    grid_as_config,
    skewed_three_state,
)
from .models.linreg import (
    LinRegModel,
    default_design,
    linreg_as_seqobs,
    linreg_exact_posterior_sampler,
    linreg_log_evidence,
    linreg_rw_schedule,
)
from .oracle import (
    DistTable,
    enumerate_log_Z,
    exact_symmetric_kl,
    verify_bound_dominates,
)
from .rng import RngStream
from .seqobs import (
    DetailedBalanceKernel,
    Proposal,
    build_seqobs_config,
    check_detailed_balance,
    composite_transition_probs,
    mh_kernel,
)
from .smc import (
    as_sampler_package,
    p_joint_log_prob,
    q_joint_log_prob,
    smc_regenerate,
    smc_regenerate_traced,
    smc_simulate,
    smc_simulate_traced,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"[{status}] {self.name}: measured {self.value:.6g} "
            f"vs tolerance {self.tolerance:.6g}" + (f" ({self.detail})" if self.detail else "")
        )


def _rel_err(delta: float, reference: float) -> float:
    return abs(delta) / max(1.0, abs(reference))


def check_traced_weight_identity(
    rng: RngStream, n_runs: int = 1000, tol: float = 1e-9
) -> CheckResult:
    """Traced log-weights equal the joint log-ratio p(u,z) - q(u;z)."""
    model = skewed_three_state()
    cfg = grid_as_config(model, 2, output_smoothing=0.3)
    worst = 0.0
    for s in range(n_runs):
        z, logw, hist = smc_simulate_traced(cfg, rng.split(0, s))
        delta = (p_joint_log_prob(cfg, hist, z) - q_joint_log_prob(cfg, hist, z)) - logw
        worst = max(worst, _rel_err(delta, logw))
    for s in range(n_runs):
        z, _ = smc_simulate(cfg, rng.split(1, s))
        logw, hist = smc_regenerate_traced(cfg, z, rng.split(2, s))
        delta = (p_joint_log_prob(cfg, hist, z) - q_joint_log_prob(cfg, hist, z)) - logw
        worst = max(worst, _rel_err(delta, logw))
    return CheckResult(
        name="traced-weight-identity",
        value=worst,
        tolerance=tol,
        passed=worst <= tol,
        detail=f"{n_runs} simulate + {n_runs} regenerate runs",
    )


def check_evidence_unbiasedness(
    rng: RngStream, n_runs: int = 20000, sigmas: float = 3.0
) -> CheckResult:
    """Mean of the per-run evidence estimate matches the enumerated normalizer."""
    model = skewed_three_state()
    cfg = grid_as_config(model, 2, output_smoothing=0.3)
    log_z = enumerate_log_Z(
        lambda s: math.log(model.unnorm_targets[-1][s]), range(model.n_states)
    )
    z_exact = math.exp(log_z)
    values = []
    for s in range(n_runs):
        _, _, hist = smc_simulate_traced(cfg, rng.split(s))
        values.append(
            math.exp(math.fsum(logmeanexp(row) for row in hist.log_weights))
        )
    mean = math.fsum(values) / n_runs
    var = math.fsum((v - mean) ** 2 for v in values) / (n_runs - 1)
    stderr = math.sqrt(var / n_runs)
    dev = abs(mean - z_exact)
    return CheckResult(
        name="evidence-unbiasedness",
        value=dev / stderr if stderr > 0 else 0.0,
        tolerance=sigmas,
        passed=dev <= sigmas * stderr,
        detail=f"mean {mean:.6f} vs exact {z_exact:.6f}, stderr {stderr:.2g}",
    )


def _default_linreg(n_observations: int = 10) -> LinRegModel:
    ys = (
        1.086696, -0.704571, 0.764271, -0.031075, 0.789889,
        0.957179, 0.340860, 1.033361, 1.557838, 4.837750,
    )[:n_observations]
    return LinRegModel(
        design=default_design(n_observations),
        observations=ys,
        prior_mean=(0.0, 0.0),
        prior_cov=((1.0, 0.0), (0.0, 1.0)),
        noise_var=1.0,
    )


def check_sandwich(
    rng: RngStream,
    n_samples: int = 2000,
    n_particles: int = 4,
    sigmas: float = 3.0,
) -> CheckResult:
    """ELBO and EUBO bracket the exact conjugate log-evidence."""
    model = _default_linreg()
    som = linreg_as_seqobs(model)
    cfg = build_seqobs_config(
        som, linreg_rw_schedule(model, step_size=0.5, repetitions=1), n_particles
    )
    pkg = as_sampler_package(cfg)
    log_posterior = lambda z: som.log_joint(z[0], z[1])
    log_z = linreg_log_evidence(model)
    elbo, se_l = estimate_elbo(pkg, log_posterior, n_samples, rng.split(0))
    eubo, se_u = estimate_eubo(
        pkg, linreg_exact_posterior_sampler(model), log_posterior, n_samples, rng.split(1)
    )
    lower_ok = elbo <= log_z + sigmas * se_l
    upper_ok = eubo >= log_z - sigmas * se_u
    margin = max(elbo - log_z - sigmas * se_l, log_z - eubo - sigmas * se_u)
    return CheckResult(
        name="sandwich",
        value=margin,
        tolerance=0.0,
        passed=lower_ok and upper_ok,
        detail=f"elbo {elbo:.4f}+-{se_l:.4f}, log Z {log_z:.4f}, eubo {eubo:.4f}+-{se_u:.4f}",
    )


def check_bound_dominance(
    rng: RngStream, replicates: int = 20000, n_particles: int = 1
) -> CheckResult:
    """Long-run KL-bound mean dominates the exact output-space symmetric KL."""
    report = verify_bound_dominates(
        skewed_three_state(), n_particles, replicates, rng, output_smoothing=0.3
    )
    return CheckResult(
        name="bound-dominance",
        value=report.margin,
        tolerance=3.0 * report.stderr,
        passed=report.passed,
        detail=f"mean {report.mean:.4f} vs exact {report.exact:.4f}, stderr {report.stderr:.2g}",
    )


def check_weight_simplification(
    rng: RngStream, pairs_per_step: int = 200, tol: float = 1e-9
) -> CheckResult:
    """Generic target/kernel weight equals the per-observation likelihood.

    Evaluates both formulas on random state pairs of the discrete mixture,
    with composite cycle transition probabilities enumerated exactly.
    """
    model = DpmModel(
        alpha=1.0, observations=(0.3, 1.7, -0.4), prior_var=4.0, obs_var=1.0
    )
    som = dpm_as_seqobs(model)
    schedule = dpm_gibbs_schedule(model, repetitions=1)
    gen = rng.generator()
    worst = 0.0
    for t in range(1, model.n_observations):
        cycle = schedule.flattened(t - 1)
        space_prev = [(None, a) for a in enumerate_assignments(t)]
        fwd = composite_transition_probs(cycle, space_prev)
        rev = composite_transition_probs(cycle, space_prev, reverse=True)
        for _ in range(pairs_per_step):
            x_prev = space_prev[int(gen.integers(len(space_prev)))]
            probs = [fwd[(x_prev, s)] for s in space_prev]
            u = gen.random() * math.fsum(probs)
            acc, mid = 0.0, space_prev[-1]
            for s, p in zip(space_prev, probs):
                acc += p
                if u < acc:
                    mid = s
                    break
            e_new = som.sample_local(None, mid[1], t, gen)
            x_cur = (None, mid[1] + (e_new,))
            k_density = fwd[(x_prev, mid)] * math.exp(
                som.log_local(e_new, None, mid[1], t)
            )
            generic = (
                som.log_step_target(t, x_cur)
                + math.log(rev[(mid, x_prev)])
                - som.log_step_target(t - 1, x_prev)
                - math.log(k_density)
            )
            simplified = som.log_likelihood(t, None, x_cur[1])
            worst = max(worst, abs(generic - simplified))
    return CheckResult(
        name="weight-simplification",
        value=worst,
        tolerance=tol,
        passed=worst <= tol,
        detail=f"{pairs_per_step} pairs per step",
    )


def check_plateau_collapse(rng: RngStream, n_runs: int = 200) -> CheckResult:
    """Collapsed and expanded rejuvenation give pathwise-identical log-weights."""
    model = DpmModel(
        alpha=1.0, observations=(0.3, 1.7, -0.4), prior_var=4.0, obs_var=1.0
    )
    som = dpm_as_seqobs(model)
    schedule = dpm_gibbs_schedule(model, repetitions=2)
    cfg_c = build_seqobs_config(som, schedule, 2, collapse=True)
    cfg_u = build_seqobs_config(som, schedule, 2, collapse=False)
    worst = 0.0
    for s in range(n_runs):
        z1, w1 = smc_simulate(cfg_c, rng.split(0, s))
        z2, w2 = smc_simulate(cfg_u, rng.split(0, s))
        if z1 != z2:
            worst = math.inf
        else:
            worst = max(worst, abs(w1 - w2))
    for s in range(n_runs):
        z, _ = smc_simulate(cfg_c, rng.split(1, s))
        w1 = smc_regenerate(cfg_c, z, rng.split(2, s))
        w2 = smc_regenerate(cfg_u, z, rng.split(2, s))
        worst = max(worst, abs(w1 - w2))
    return CheckResult(
        name="plateau-collapse",
        value=worst,
        tolerance=0.0,
        passed=worst == 0.0,
        detail=f"{n_runs} coupled simulate and regenerate runs",
    )


def _mh_test_kernel() -> tuple[DetailedBalanceKernel, Callable, list]:
    space = [((s,), ()) for s in range(3)]
    table = (1.0, 2.0, 3.0)

    def log_target(state):
        return math.log(table[state[0][0]])

    proposal = Proposal(
        sample=lambda state, gen: ((int(gen.integers(3)),), state[1]),
        log_density=lambda new, given: -math.log(3.0),
    )
    kernel = mh_kernel(
        log_target, proposal, symmetric=False, enumerable_space=space, label="mh-123"
    )
    return kernel, log_target, space


def check_detailed_balance_suite(
    rng: RngStream, tol: float = 1e-12, negative_control: bool = False
) -> list[CheckResult]:
    """Flow checks for every shipped kernel family on its discrete test space."""
    results = []
    kernel, log_target, space = _mh_test_kernel()
    rep = check_detailed_balance(kernel, log_target, space, tol=tol)
    results.append(
        CheckResult(
            name="detailed-balance-mh",
            value=rep.max_violation,
            tolerance=tol,
            passed=rep.passed,
        )
    )

    model = DpmModel(
        alpha=1.0, observations=(0.3, 1.7, -0.4), prior_var=4.0, obs_var=1.0
    )
    som = dpm_as_seqobs(model)
    schedule = dpm_gibbs_schedule(model, repetitions=1)
    worst = 0.0
    for t in range(model.n_observations):
        space_t = [(None, a) for a in enumerate_assignments(t + 1)]
        for kern in schedule.cycles[t]:
            rep = check_detailed_balance(
                kern, lambda st, _t=t: som.log_step_target(_t, st), space_t, tol=tol
            )
            worst = max(worst, rep.max_violation)
    results.append(
        CheckResult(
            name="detailed-balance-gibbs",
            value=worst,
            tolerance=tol,
            passed=worst <= tol,
        )
    )

    if negative_control:
        broken = DetailedBalanceKernel(
            step=lambda state, gen: ((int(gen.integers(3)),), state[1]),
            transition_prob=lambda x, y: 1.0 / 3.0,
            label="always-accept",
        )
        _, log_target, space = _mh_test_kernel()
        rep = check_detailed_balance(broken, log_target, space, tol=tol)
        # this check *passes* the battery only if the broken kernel is caught
        results.append(
            CheckResult(
                name="detailed-balance-negative-control",
                value=rep.max_violation,
                tolerance=tol,
                passed=rep.passed,
                detail="deliberately broken kernel; expected to FAIL",
            )
        )
    return results


def check_adapter_exactness(
    rng: RngStream, n_samples: int = 20000, sigmas: float = 3.0
) -> CheckResult:
    """With a tractable sampler the bound estimate equals the exact symmetric KL."""
    p = DistTable({0: 0.5, 1: 0.5})
    posterior = DistTable.from_weights({0: 3.0, 1: 1.0})
    pkg = tractable_adapter(p.sampler(), lambda z: math.log(p.prob(z)))
    log_posterior = lambda z: math.log({0: 3.0, 1: 1.0}[z])
    est = estimate_kl_bound(
        pkg, posterior.sampler(), log_posterior, n_samples, n_samples, rng
    )
    exact = exact_symmetric_kl(p, posterior)
    stderr = math.hypot(est.eubo_stderr, est.elbo_stderr)
    dev = abs(est.kl_bound - exact)
    return CheckResult(
        name="adapter-exactness",
        value=dev / stderr if stderr > 0 else 0.0,
        tolerance=sigmas,
        passed=dev <= sigmas * stderr,
        detail=f"estimate {est.kl_bound:.6f} vs exact {exact:.6f}",
    )


def run_validation(
    seed: int = 20260810, negative_controls: bool = False, scale: float = 1.0
) -> list[CheckResult]:
    """Run the whole battery; scale multiplies the Monte Carlo sample counts."""
    root = RngStream(seed)

    def scaled(n: int) -> int:
        return max(2, int(n * scale))

    results = [
        check_traced_weight_identity(root.split(0), n_runs=scaled(500)),
        check_evidence_unbiasedness(root.split(1), n_runs=scaled(20000)),
        check_sandwich(root.split(2), n_samples=scaled(2000)),
        check_bound_dominance(root.split(3), replicates=scaled(20000)),
        check_weight_simplification(root.split(4), pairs_per_step=scaled(200)),
        check_plateau_collapse(root.split(5), n_runs=scaled(200)),
        check_adapter_exactness(root.split(6), n_samples=scaled(20000)),
    ]
    results.extend(
        check_detailed_balance_suite(root.split(7), negative_control=negative_controls)
    )
    return results
