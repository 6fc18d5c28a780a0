import math

import numpy as np
import pytest

from smcdiv import RngStream, smc_regenerate, smc_simulate, smc_simulate_traced
from smcdiv.errors import (
    ModelConsistencyError,
    ScheduleTargetError,
    SupportConditionError,
)
from smcdiv.models import (
    DpmModel,
    dpm_as_seqobs,
    dpm_gibbs_schedule,
    enumerate_assignments,
)
from smcdiv.seqobs import (
    DetailedBalanceKernel,
    Proposal,
    RejuvenationSchedule,
    SeqObsModel,
    build_seqobs_config,
    check_detailed_balance,
    composite_transition_probs,
    cycle_collapse,
    gibbs_site_kernel,
    identity_kernel,
    mh_kernel,
    no_rejuvenation,
    validate_seqobs_model,
)


def small_dpm():
    return DpmModel(
        alpha=1.0, observations=(0.3, 1.7, -0.4), prior_var=4.0, obs_var=1.0
    )


def three_state_target():
    space = [((s,), ()) for s in range(3)]
    table = (1.0, 2.0, 3.0)

    def log_target(state):
        return math.log(table[state[0][0]])

    return space, log_target


class TestModelValidation:
    def test_shipped_model_consistent(self):
        validate_seqobs_model(dpm_as_seqobs(small_dpm()), RngStream(0))

    def test_inconsistent_joint_detected(self):
        som = dpm_as_seqobs(small_dpm())
        broken = SeqObsModel(
            n_observations=som.n_observations,
            sample_global=som.sample_global,
            log_global=som.log_global,
            sample_local=som.sample_local,
            log_local=som.log_local,
            log_likelihood=som.log_likelihood,
            log_joint=lambda theta, locs: som.log_joint(theta, locs) + 0.1,
        )
        with pytest.raises(ModelConsistencyError):
            validate_seqobs_model(broken, RngStream(1))


class TestMhKernel:
    def test_uphill_moves_always_accepted(self):
        space, log_target = three_state_target()
        proposal = Proposal(
            sample=lambda st, gen: ((1,), ()),
            log_density=lambda new, given: 0.0,
        )
        kernel = mh_kernel(log_target, proposal, enumerable_space=space)
        # from state 0 the target ratio is 2: acceptance probability 1
        assert kernel.transition_prob(((0,), ()), ((1,), ())) == pytest.approx(1.0)

    def test_downhill_moves_accepted_with_ratio(self):
        space, log_target = three_state_target()
        proposal = Proposal(
            sample=lambda st, gen: ((0,), ()),
            log_density=lambda new, given: 0.0,
        )
        kernel = mh_kernel(log_target, proposal, enumerable_space=space)
        # from state 1 the target ratio is 0.5: acceptance probability 0.5
        assert kernel.transition_prob(((1,), ()), ((0,), ())) == pytest.approx(0.5)

    def test_random_walk_on_three_states_satisfies_flow_equality(self):
        space, log_target = three_state_target()
        proposal = Proposal(
            sample=lambda st, gen: ((int(gen.integers(3)),), ()),
            log_density=lambda new, given: -math.log(3.0),
        )
        kernel = mh_kernel(log_target, proposal, enumerable_space=space)
        report = check_detailed_balance(kernel, log_target, space)
        assert report.method == "enumeration"
        assert report.max_violation <= 1e-12
        assert report.passed

    def test_asymmetric_proposal_requires_density(self):
        _, log_target = three_state_target()
        with pytest.raises(ValueError):
            mh_kernel(log_target, Proposal(sample=lambda st, gen: st), symmetric=False)

    def test_zero_reverse_density_is_support_error(self):
        _, log_target = three_state_target()
        # propose a deterministic shift whose reverse has zero density
        proposal = Proposal(
            sample=lambda st, gen: ((st[0][0] + 1,), ()),
            log_density=lambda new, given: 0.0
            if new[0][0] == given[0][0] + 1
            else -math.inf,
        )
        kernel = mh_kernel(
            lambda st: 0.0 if st[0][0] < 5 else -math.inf, proposal, symmetric=False
        )
        with pytest.raises(SupportConditionError):
            kernel.step(((0,), ()), RngStream(2).generator())


class TestGibbsKernel:
    def test_two_point_conditional_long_run_frequencies(self):
        def conditional(state):
            return [((("a",), ()), 0.25), ((("b",), ()), 0.75)]

        kernel = gibbs_site_kernel(0, conditional)
        gen = RngStream(3).generator()
        n = 20_000
        hits = sum(
            1 for _ in range(n) if kernel.step((("a",), ()), gen)[0][0] == "b"
        )
        sigma = math.sqrt(0.75 * 0.25 * n)
        assert abs(hits - 0.75 * n) <= 3 * sigma

    def test_deterministic_conditional(self):
        def conditional(state):
            return [((("x",), ()), 1.0), ((("y",), ()), 0.0)]

        kernel = gibbs_site_kernel(0, conditional)
        gen = RngStream(4).generator()
        assert all(
            kernel.step((("y",), ()), gen)[0][0] == "x" for _ in range(100)
        )

    def test_unnormalized_conditional_rejected(self):
        def conditional(state):
            return [((("x",), ()), 0.6), ((("y",), ()), 0.5)]

        kernel = gibbs_site_kernel(0, conditional)
        with pytest.raises(ModelConsistencyError):
            kernel.step((("x",), ()), RngStream(5).generator())

    def test_dpm_site_conditional_matches_hand_enumeration(self):
        # two points: site-1 conditional given e_0 = 0 is the seating rule
        # alpha vs 1 weighted by the collapsed predictive of y_1
        model = DpmModel(
            alpha=1.5, observations=(0.4, 1.1), prior_var=4.0, obs_var=1.0
        )
        schedule = dpm_gibbs_schedule(model)
        kernel = schedule.cycles[1][1]
        from smcdiv.models import log_predictive

        w_join = 1.0 * math.exp(log_predictive(model, [0.4], 1.1))
        w_new = 1.5 * math.exp(log_predictive(model, [], 1.1))
        expected_join = w_join / (w_join + w_new)
        got = kernel.transition_prob((None, (0, 0)), (None, (0, 0)))
        assert got == pytest.approx(expected_join, rel=1e-12)
        got_new = kernel.transition_prob((None, (0, 0)), (None, (0, 1)))
        assert got_new == pytest.approx(1.0 - expected_join, rel=1e-12)

    def test_all_shipped_gibbs_kernels_satisfy_detailed_balance(self):
        model = small_dpm()
        som = dpm_as_seqobs(model)
        schedule = dpm_gibbs_schedule(model)
        for t in range(model.n_observations):
            space = [(None, a) for a in enumerate_assignments(t + 1)]
            for kernel in schedule.cycles[t]:
                report = check_detailed_balance(
                    kernel, lambda st, _t=t: som.log_step_target(_t, st), space
                )
                assert report.passed, kernel.label


class TestDetailedBalanceCheck:
    def test_identity_kernel_has_zero_violation(self):
        space, log_target = three_state_target()
        report = check_detailed_balance(identity_kernel(), log_target, space)
        assert report.max_violation == 0.0
        assert report.passed

    def test_always_accept_kernel_detected(self):
        space, log_target = three_state_target()
        broken = DetailedBalanceKernel(
            step=lambda st, gen: ((int(gen.integers(3)),), ()),
            transition_prob=lambda x, y: 1.0 / 3.0,
            label="always-accept",
        )
        report = check_detailed_balance(broken, log_target, space)
        assert report.max_violation > 1e-3
        assert not report.passed

    def test_empirical_fallback_accepts_correct_kernel(self):
        space, log_target = three_state_target()
        proposal = Proposal(
            sample=lambda st, gen: ((int(gen.integers(3)),), ()),
            log_density=lambda new, given: -math.log(3.0),
        )
        kernel = mh_kernel(log_target, proposal)  # no enumerable space given
        assert kernel.transition_prob is None
        report = check_detailed_balance(
            kernel, log_target, space, rng=RngStream(6), n_samples=20_000
        )
        assert report.method == "empirical"
        assert report.passed

    def test_empirical_fallback_flags_broken_kernel(self):
        space, log_target = three_state_target()
        broken = DetailedBalanceKernel(
            step=lambda st, gen: ((int(gen.integers(3)),), ()),
            label="always-accept",
        )
        report = check_detailed_balance(
            broken, log_target, space, rng=RngStream(7), n_samples=50_000
        )
        assert report.method == "empirical"
        assert not report.passed

    def test_oversized_space_rejected(self):
        space, log_target = three_state_target()
        with pytest.raises(ValueError):
            check_detailed_balance(
                identity_kernel(), lambda st: 0.0, [((i,), ()) for i in range(1001)]
            )


class TestSchedule:
    def test_mismatched_target_declaration_rejected(self):
        kernel = identity_kernel(target_step=2)
        with pytest.raises(ScheduleTargetError):
            RejuvenationSchedule.uniform([(kernel,), ()], repetitions=1)

    def test_schedule_length_must_match_model(self):
        som = dpm_as_seqobs(small_dpm())
        with pytest.raises(ScheduleTargetError):
            build_seqobs_config(som, no_rejuvenation(2), 2)

    def test_flattened_applies_repetitions(self):
        kernel = identity_kernel(target_step=0)
        schedule = RejuvenationSchedule.uniform([(kernel,)], repetitions=3)
        assert schedule.flattened(0) == (kernel,) * 3


class TestCycleCollapse:
    def test_empty_cycle_gives_identity_kernels(self):
        fwd, bwd = cycle_collapse(())
        state = (None, (1, 2))
        assert fwd.sample(state, RngStream(8)) == state
        assert bwd.sample(state, RngStream(9)) == state

    def test_backward_applies_reverse_order(self):
        applied = []

        def make(tag):
            def step(state, gen):
                applied.append(tag)
                return state

            return DetailedBalanceKernel(step=step, label=tag)

        fwd, bwd = cycle_collapse((make("a"), make("b"), make("c")))
        fwd.sample((None, ()), RngStream(10))
        assert applied == ["a", "b", "c"]
        applied.clear()
        bwd.sample((None, ()), RngStream(11))
        assert applied == ["c", "b", "a"]

    def test_coupled_streams_shared_between_orders(self):
        # the same sub-kernel sees the same stream in both directions
        seen = {}

        def make(tag):
            def step(state, gen):
                seen.setdefault(tag, []).append(gen.random())
                return state

            return DetailedBalanceKernel(step=step, label=tag)

        fwd, bwd = cycle_collapse((make("a"), make("b")))
        fwd.sample((None, ()), RngStream(12))
        bwd.sample((None, ()), RngStream(12))
        assert seen["a"][0] == seen["a"][1]
        assert seen["b"][0] == seen["b"][1]


class TestPlateauEquivalence:
    def test_plateau_rows_contribute_exactly_zero(self):
        model = small_dpm()
        som = dpm_as_seqobs(model)
        schedule = dpm_gibbs_schedule(model, repetitions=2)
        cfg = build_seqobs_config(som, schedule, 2, collapse=False)
        _, _, hist = smc_simulate_traced(cfg, RngStream(13))
        # rows between the likelihood steps are the plateau rows
        n_plateau_rows = sum(
            1 for row in hist.log_weights if all(w == 0.0 for w in row)
        )
        expected_plateaus = sum(
            len(schedule.flattened(t)) for t in range(model.n_observations - 1)
        )
        assert n_plateau_rows >= expected_plateaus

    def test_collapsed_and_expanded_agree_pathwise(self):
        model = small_dpm()
        som = dpm_as_seqobs(model)
        schedule = dpm_gibbs_schedule(model, repetitions=2)
        cfg_c = build_seqobs_config(som, schedule, 2, collapse=True)
        cfg_u = build_seqobs_config(som, schedule, 2, collapse=False)
        for s in range(200):
            z1, w1 = smc_simulate(cfg_c, RngStream(14).split(s))
            z2, w2 = smc_simulate(cfg_u, RngStream(14).split(s))
            assert z1 == z2
            assert w1 == w2
        for s in range(200):
            z, _ = smc_simulate(cfg_c, RngStream(15).split(s))
            r1 = smc_regenerate(cfg_c, z, RngStream(16).split(s))
            r2 = smc_regenerate(cfg_u, z, RngStream(16).split(s))
            assert r1 == r2

    def test_collapsed_and_expanded_agree_in_distribution(self):
        # redundant given pathwise equality, but checks the uncoupled case
        model = small_dpm()
        som = dpm_as_seqobs(model)
        schedule = dpm_gibbs_schedule(model, repetitions=1)
        cfg_c = build_seqobs_config(som, schedule, 2, collapse=True)
        cfg_u = build_seqobs_config(som, schedule, 2, collapse=False)
        n = 2000
        w_c = [smc_simulate(cfg_c, RngStream(17).split(s))[1] for s in range(n)]
        w_u = [smc_simulate(cfg_u, RngStream(18).split(s))[1] for s in range(n)]
        mean_c = math.fsum(w_c) / n
        mean_u = math.fsum(w_u) / n
        var_c = math.fsum((w - mean_c) ** 2 for w in w_c) / (n - 1)
        var_u = math.fsum((w - mean_u) ** 2 for w in w_u) / (n - 1)
        pooled = math.sqrt(var_c / n + var_u / n)
        assert abs(mean_c - mean_u) <= 3 * pooled

    def test_frozen_kernels_are_valid_schedule_entries(self):
        model = small_dpm()
        som = dpm_as_seqobs(model)
        schedule = RejuvenationSchedule.uniform(
            [(identity_kernel(target_step=t),) for t in range(3)], repetitions=2
        )
        cfg_c = build_seqobs_config(som, schedule, 2, collapse=True)
        cfg_u = build_seqobs_config(som, schedule, 2, collapse=False)
        for s in range(50):
            z1, w1 = smc_simulate(cfg_c, RngStream(19).split(s))
            z2, w2 = smc_simulate(cfg_u, RngStream(19).split(s))
            assert z1 == z2 and w1 == w2


class TestWeightSimplification:
    def test_generic_weight_equals_likelihood_on_random_pairs(self):
        model = small_dpm()
        som = dpm_as_seqobs(model)
        schedule = dpm_gibbs_schedule(model, repetitions=1)
        gen = np.random.default_rng(20)
        for t in range(1, model.n_observations):
            cycle = schedule.flattened(t - 1)
            space_prev = [(None, a) for a in enumerate_assignments(t)]
            fwd = composite_transition_probs(cycle, space_prev)
            rev = composite_transition_probs(cycle, space_prev, reverse=True)
            for _ in range(100):
                x_prev = space_prev[int(gen.integers(len(space_prev)))]
                weights = [fwd[(x_prev, s)] for s in space_prev]
                u = gen.random() * math.fsum(weights)
                acc, mid = 0.0, space_prev[-1]
                for s, w in zip(space_prev, weights):
                    acc += w
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
                assert abs(generic - simplified) <= 1e-9


class TestOutputWeight:
    def test_final_weight_is_negative_log_joint(self):
        model = small_dpm()
        som = dpm_as_seqobs(model)
        cfg = build_seqobs_config(som, dpm_gibbs_schedule(model), 2)
        state = (None, (0, 0, 1))
        assert cfg.output_log_weight(state, state) == pytest.approx(
            -som.log_joint(None, (0, 0, 1))
        )
