import numpy as np
import pytest
from hypothesis import given, strategies as st

from reclab.errors import ConfigError
from reclab.interactions import (ENGAGEMENT_VALUE, OutcomeKind, emit_log,
                                 ingest_log)
from reclab.simulator import (
    WorldConfig,
    cascade_q,
    outcome_probs,
    expected_value,
    clamped,
    draw_outcome,
    position_effect_vector,
    make_world,
    simulate_period,
    assign_arms,
    ExperimentPlan,
    run_experiment,
    true_policy_value,
    sample_interaction_log,
    OTHER_SECTION,
)
from reclab.util import rng_for

SMALL = WorldConfig(n_users=40, n_stories=24, other_rate=0.5)


class TestOutcomeDraw:
    @given(st.floats(min_value=0.05, max_value=0.95))
    def test_mean_equals_mu(self, mu):
        assert expected_value(mu) == pytest.approx(mu, abs=1e-12)

    def test_cubic_solved(self):
        q = cascade_q(0.42)
        assert 0.5 * q ** 3 + 0.2 * q ** 2 + 0.3 * q == \
            pytest.approx(0.42, abs=1e-12)

    def test_two_draws_double_the_value(self):
        # expected engagement of two independent draws at mu = 0.3 is 0.6
        assert 2 * expected_value(0.3) == pytest.approx(0.6, abs=1e-12)

    def test_probs_sum_to_one(self):
        pc, ps, pv, pk = outcome_probs(0.5)
        assert pc + ps + pv + pk == pytest.approx(1.0, abs=1e-12)

    def test_clipping_outside_range(self):
        assert clamped(0.01) and clamped(0.99)
        assert not clamped(0.5)
        assert expected_value(0.01) == pytest.approx(0.05, abs=1e-12)

    def test_draw_thresholds(self):
        q = 0.6
        eps = 1e-9
        assert draw_outcome(1 - q - eps, q) is OutcomeKind.SKIPPED
        assert draw_outcome(1 - q + eps, q) is OutcomeKind.VIEWED
        assert draw_outcome(1 - q * q + eps, q) is OutcomeKind.STARTED
        assert draw_outcome(1 - q ** 3 + eps, q) is OutcomeKind.COMPLETED

    def test_empirical_frequencies(self):
        mu = 0.45
        q = cascade_q(mu)
        rng = rng_for(0, "freq")
        n = 40000
        draws = [draw_outcome(rng.uniform(), q) for _ in range(n)]
        pc, ps, pv, pk = outcome_probs(mu)
        for kind, p in [(OutcomeKind.COMPLETED, pc),
                        (OutcomeKind.STARTED, ps),
                        (OutcomeKind.VIEWED, pv),
                        (OutcomeKind.SKIPPED, pk)]:
            freq = sum(d is kind for d in draws) / n
            se = np.sqrt(p * (1 - p) / n)
            assert abs(freq - p) < 3 * se + 1e-9, kind


class TestWorld:
    def test_position_effects_normalized_geometric(self):
        v = position_effect_vector(0.7, 15)
        assert v.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(v[1:] / v[:-1], 0.7)

    def test_deterministic(self):
        w1 = make_world(SMALL, seed=11)
        w2 = make_world(SMALL, seed=11)
        assert w1.editorial_script == w2.editorial_script
        assert w1.truth.user_effects == w2.truth.user_effects
        assert w1.activity.rate == w2.activity.rate

    def test_seed_changes_world(self):
        w1 = make_world(SMALL, seed=11)
        w2 = make_world(SMALL, seed=12)
        assert w1.truth.user_effects != w2.truth.user_effects

    def test_segments_flip_preferences(self):
        world = make_world(SMALL, seed=3)
        ids = world.story_ids()
        niche_u = [u for u, s in world.truth.user_segment.items() if s == 1]
        main_u = [u for u, s in world.truth.user_segment.items() if s == 0]
        top_niche = ids[int(np.argmax(world.truth.mu_row(niche_u[0], ids)))]
        top_main = ids[int(np.argmax(world.truth.mu_row(main_u[0], ids)))]
        assert world.truth.story_segment[top_niche] == 1
        assert world.truth.story_segment[top_main] == 0

    def test_editorial_rotation_covers_catalog(self):
        world = make_world(SMALL, seed=3)
        seen = set()
        for week in range(world.editorial_cycle):
            seen |= set(world.editorial_script[(1, week)]
                        [:world.config.slate_size])
        assert seen == set(world.story_ids())

    def test_config_round_trip(self):
        cfg = WorldConfig(n_users=10, elastic_usage=True)
        assert WorldConfig.from_json(cfg.to_json()) == cfg

    def test_config_unknown_key(self):
        with pytest.raises(ConfigError):
            WorldConfig.from_json('{"n_users": 5, "bogus": 1}')

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            WorldConfig(n_users=0).validate()
        with pytest.raises(ConfigError):
            WorldConfig(channel_probs=(0.5, 0.2, 0.2)).validate()


class TestSimulatePeriod:
    def test_deterministic(self):
        world = make_world(SMALL, seed=5)
        pol = {u: world.editorial_policy() for u in world.users}
        d1 = simulate_period(world, pol, days=7, seed=9)
        d2 = simulate_period(world, pol, days=7, seed=9)
        assert d1 == d2

    def test_seed_changes_log(self):
        world = make_world(SMALL, seed=5)
        pol = {u: world.editorial_policy() for u in world.users}
        d1 = simulate_period(world, pol, days=7, seed=9)
        d2 = simulate_period(world, pol, days=7, seed=10)
        assert d1 != d2

    def test_zero_activity_empty_log(self):
        cfg = WorldConfig(n_users=10, n_stories=16, activity_prob_lo=0.0,
                          activity_prob_hi=0.0)
        world = make_world(cfg, seed=1)
        pol = {u: world.editorial_policy() for u in world.users}
        data = simulate_period(world, pol, days=5, seed=0)
        assert data.n_records == 0

    def test_missing_policy_rejected(self):
        world = make_world(SMALL, seed=5)
        with pytest.raises(ConfigError):
            simulate_period(world, {}, days=1, seed=0)

    def test_round_trip_through_log_format(self, tmp_path):
        world = make_world(SMALL, seed=5)
        pol = {u: world.editorial_policy() for u in world.users}
        data = simulate_period(world, pol, days=5, seed=2)
        p = tmp_path / "log.csv"
        up = tmp_path / "users.csv"
        sp = tmp_path / "stories.csv"
        emit_log(data, p, users_path=up, stories_path=sp)
        assert ingest_log(p, users_path=up, stories_path=sp) == data

    def test_not_shown_rows_have_value_nan(self):
        world = make_world(SMALL, seed=5)
        pol = {u: world.editorial_policy() for u in world.users}
        data = simulate_period(world, pol, days=7, seed=2)
        ns = ~data.scored
        assert ns.any()
        assert np.isnan(data.values[ns]).all()
        # untouched-shallower-rank rule: a NotShown row always sits above
        # some interaction in the same session
        recs = {}
        for i in np.flatnonzero(ns):
            key = (int(data.user_id[i]), int(data.day[i]),
                   int(data.session_id[i]))
            recs.setdefault(key, []).append(int(data.slate_rank[i]))
        scored_idx = np.flatnonzero(data.scored
                                    & (data.slate_rank > 0))
        deepest = {}
        for i in scored_idx:
            key = (int(data.user_id[i]), int(data.day[i]),
                   int(data.session_id[i]))
            deepest[key] = max(deepest.get(key, 0), int(data.slate_rank[i]))
        for key, ranks in recs.items():
            assert key in deepest
            assert max(ranks) < deepest[key]

    def test_other_section_sessions_disjoint(self):
        world = make_world(SMALL, seed=5)
        pol = {u: world.editorial_policy() for u in world.users}
        data = simulate_period(world, pol, days=7, seed=2)
        other = data.section == OTHER_SECTION
        assert (data.session_id[other] >= 100000).all()
        assert (data.session_id[~other] < 100000).all()


class TestOracle:
    def test_matches_monte_carlo(self):
        world = make_world(SMALL, seed=7)
        policy = world.editorial_policy()
        users = world.user_ids()
        truth = true_policy_value(world, policy, users, days=14)

        reps = []
        pol = {u: policy for u in world.users}
        for rep in range(12):
            data = simulate_period(world, pol, days=14, seed=1000 + rep)
            sect = data.in_section("recommended_story")
            reps.append(np.nansum(sect.values))
        reps = np.array(reps)
        se = reps.std(ddof=1) / np.sqrt(len(reps))
        assert abs(reps.mean() - truth) < 3 * se

    def test_per_interaction_in_unit_interval(self):
        world = make_world(SMALL, seed=7)
        v = true_policy_value(world, world.editorial_policy(),
                              world.user_ids(), days=14,
                              per_interaction=True)
        assert 0.0 < v < 1.0

    def test_rejects_daily_reranking(self):
        cfg = WorldConfig(n_users=10, n_stories=16, rerank_daily=True)
        world = make_world(cfg, seed=0)
        with pytest.raises(ConfigError):
            true_policy_value(world, world.editorial_policy(),
                              world.user_ids(), days=7)

    def test_scales_with_days(self):
        world = make_world(SMALL, seed=7)
        users = world.user_ids()[:5]
        policy = world.editorial_policy()
        v7 = true_policy_value(world, policy, users, days=7)
        v14 = true_policy_value(world, policy, users, days=14)
        assert v14 > v7 > 0


class TestExperiment:
    def test_assignment_balance_and_determinism(self):
        users = list(range(1, 2001))
        arms = assign_arms(users, seed=4, prob=0.5)
        again = assign_arms(users, seed=4, prob=0.5)
        assert arms == again
        share = np.mean(list(arms.values()))
        assert abs(share - 0.5) < 3 * np.sqrt(0.25 / len(users))

    def test_run_experiment_structure(self):
        world = make_world(SMALL, seed=2)
        plan = ExperimentPlan(seed=1, pre_days=14, duration_days=7)
        result = run_experiment(world, plan)
        assert set(result.assignment) == set(world.users)
        assert set(result.assignment.values()) <= {0, 1}
        assert result.launched <= set(world.users)
        assert result.pre.period == (0, 13)
        assert result.experiment.period == (14, 20)
        assert set(result.policies) == {"treatment", "control"}
        assert result.policies["treatment"].kind == "personalized"
        assert result.policies["control"].kind == "editorial"

    def test_bad_plan(self):
        with pytest.raises(ConfigError):
            ExperimentPlan(assignment_prob=1.5).validate()
        with pytest.raises(ConfigError):
            ExperimentPlan(duration_days=0).validate()


class TestFlatLog:
    def test_shape_and_section(self):
        world = make_world(SMALL, seed=6)
        data = sample_interaction_log(world, seed=0,
                                      interactions_per_user=30, n_days=30)
        assert (data.section == OTHER_SECTION).all()
        assert data.scored.all()
        counts = np.unique(data.user_id, return_counts=True)[1]
        assert (counts <= 30).all()
        assert counts.min() > 15
