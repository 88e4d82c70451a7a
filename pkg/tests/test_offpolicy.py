import numpy as np
import pytest

from reclab.errors import (CoverageViolation, NoScorableRecords,
                           ScaleMismatch)
from reclab.interactions import LogDataset, OutcomeKind, UserProfile
from reclab.policies import PolicySpec
from reclab.simulator import make_world, simulate_period, WorldConfig
from reclab.offpolicy import (
    DEFAULT_FLOOR,
    estimate_position_effects,
    editorial_propensity,
    topk_propensity,
    fit_outcome_regressor,
    dr_value,
    bootstrap_se,
    compare_policies,
    heavy_light_split,
    onpolicy_vs_offpolicy_check,
)
from reclab.analysis import OutcomeVector

SEC = "recommended_story"


def make_dataset(rows, users=None):
    cols = list(zip(*rows))
    return LogDataset.from_columns(
        cols[0], cols[1], cols[2], cols[3], cols[4], cols[5],
        [list(OutcomeKind).index(k) for k in cols[6]],
        users=users)


class StubPropensity:
    """Propensity stub with a constant per-story exposure table."""

    def __init__(self, table, floor_stories=frozenset()):
        self.table = table
        self.floor_stories = frozenset(floor_stories)

    def probability(self, user_id, story_id, day=0):
        return self.table[story_id]

    def at_floor(self, user_id, story_id, day=0):
        return story_id in self.floor_stories

    def support(self, user_id, day=0):
        return dict(self.table)


class ZeroRegressor:
    def predict_logged(self, users, stories):
        return np.zeros(len(users))

    def predict_pairs(self, users, stories):
        return np.zeros(len(users))


class TestPositionEffects:
    def test_recovers_simulated_vector(self):
        cfg = WorldConfig(n_users=80, n_stories=30, other_rate=0.0)
        world = make_world(cfg, seed=3)
        pol = {u: world.editorial_policy() for u in world.users}
        data = simulate_period(world, pol, days=28, seed=17)
        est = estimate_position_effects(data)
        assert np.max(np.abs(est.vector() - world.position_effects)) < 0.02
        assert est.vector().sum() == pytest.approx(1.0, abs=1e-12)
        assert not est.never_observed

    def test_never_observed_ranks_floored(self):
        rows = [(1, 10, 0, 0, SEC, 1, OutcomeKind.VIEWED),
                (1, 11, 1, 0, SEC, 2, OutcomeKind.VIEWED)]
        est = estimate_position_effects(make_dataset(rows))
        assert set(est.never_observed) == set(range(3, 16))
        v = est.vector()
        # floor mass, then renormalized: equal and positive on those ranks
        assert (v[2:] > 0).all()
        assert np.allclose(v[2:], v[2], atol=1e-15)
        assert v.sum() == pytest.approx(1.0, abs=1e-12)

    def test_monotone_smoothing(self):
        rows = []
        # rank 2 more frequent than rank 1: a monotonicity violation
        counts = {1: 5, 2: 9, 3: 3}
        day = 0
        for rank, n in counts.items():
            for _ in range(n):
                rows.append((1, 100 + day, day, 0, SEC, rank,
                             OutcomeKind.VIEWED))
                day += 1
        est = estimate_position_effects(make_dataset(rows), monotone=True)
        v = est.vector()
        assert est.smoothed
        assert (np.diff(v) <= 1e-12).all()
        assert v[0] == pytest.approx(v[1])

    def test_empty_section(self):
        rows = [(1, 10, 0, 0, "other", -1, OutcomeKind.VIEWED)]
        with pytest.raises(NoScorableRecords):
            estimate_position_effects(make_dataset(rows))


class TestEditorialPropensity:
    def test_empirical_frequencies(self):
        users = {1: UserProfile(1, grade=1), 2: UserProfile(2, grade=1)}
        rows = [(1, 10, 0, 0, SEC, 1, OutcomeKind.VIEWED),
                (1, 10, 1, 0, SEC, 1, OutcomeKind.VIEWED),
                (2, 11, 0, 0, SEC, 2, OutcomeKind.COMPLETED),
                (2, 11, 1, 0, SEC, 2, OutcomeKind.SKIPPED)]
        model = editorial_propensity(make_dataset(rows, users=users))
        assert model.probability(1, 10) == pytest.approx(0.5)
        assert model.probability(2, 11) == pytest.approx(0.5)

    def test_unseen_story_floored(self):
        users = {1: UserProfile(1, grade=1)}
        rows = [(1, 10, 0, 0, SEC, 1, OutcomeKind.VIEWED),
                (1, 11, 1, 0, SEC, 1, OutcomeKind.VIEWED)]
        model = editorial_propensity(make_dataset(rows, users=users))
        assert model.probability(1, 11) == pytest.approx(0.5)
        # story 12 is unknown to the logs entirely -> not in catalog,
        # so register it via a NotShown row instead
        rows.append((1, 12, 2, 0, SEC, 1, OutcomeKind.NOT_SHOWN))
        model = editorial_propensity(make_dataset(rows, users=users))
        assert model.probability(1, 12) == pytest.approx(DEFAULT_FLOOR)
        assert model.at_floor(1, 12)
        assert not model.at_floor(1, 10)

    def test_unseen_grade_uniform(self):
        users = {1: UserProfile(1, grade=1), 2: UserProfile(2, grade=3)}
        rows = [(1, 10, 0, 0, SEC, 1, OutcomeKind.VIEWED),
                (1, 11, 1, 0, SEC, 1, OutcomeKind.VIEWED)]
        model = editorial_propensity(make_dataset(rows, users=users))
        assert model.probability(2, 10) == pytest.approx(0.5)
        assert 3 in model.unseen_grades


class TestTopKPropensity:
    def test_uniform_position_effects(self):
        catalog = list(range(1, 31))
        script = {(1, w): catalog for w in range(10)}
        policy = PolicySpec(kind="editorial", script=script, slate_size=15)
        model = topk_propensity(policy, np.full(15, 1.0 / 15), catalog,
                                grade_of={7: 1})
        assert model.probability(7, 1, day=0) == pytest.approx(1.0 / 15)
        assert model.probability(7, 20, day=0) == pytest.approx(DEFAULT_FLOOR)
        assert model.at_floor(7, 20, day=0)
        assert not model.at_floor(7, 15, day=0)
        assert sum(model.support(7, 0).values()) == pytest.approx(1.0)

    def test_weekly_rotation_respected(self):
        catalog = list(range(1, 31))
        script = {(1, 0): catalog, (1, 1): catalog[15:] + catalog[:15]}
        policy = PolicySpec(kind="editorial", script=script, slate_size=15)
        model = topk_propensity(policy, np.full(15, 1.0 / 15), catalog,
                                grade_of={7: 1})
        assert model.at_floor(7, 20, day=0)
        assert not model.at_floor(7, 20, day=7)


class TestDrIdentities:
    def multi_user_log(self, n_users=10):
        rows = []
        kinds = [OutcomeKind.COMPLETED, OutcomeKind.STARTED,
                 OutcomeKind.VIEWED, OutcomeKind.SKIPPED]
        for u in range(1, n_users + 1):
            for d in range(4):
                rows.append((u, 10 + (u + d) % 3, d, 0, SEC, 1 + d % 3,
                             kinds[(u + d) % 4]))
        return make_dataset(rows)

    def test_ipw_identity_recovers_log_mean(self):
        data = self.multi_user_log()
        table = {10: 0.4, 11: 0.35, 12: 0.25}
        prop = StubPropensity(table)
        est = dr_value(data, target=prop, logging_model=prop,
                       regressor=ZeroRegressor(), bootstrap=0)
        y = data.values[data.scored]
        assert est.value == pytest.approx(float(y.mean()), abs=1e-12)
        assert est.min_weight == pytest.approx(1.0, abs=1e-12)
        assert est.max_weight == pytest.approx(1.0, abs=1e-12)
        assert est.effective_sample_size == pytest.approx(est.n_logs)

    def test_weight_scale_invariance(self):
        data = self.multi_user_log()
        t1 = StubPropensity({10: 0.4, 11: 0.3, 12: 0.3})
        l1 = StubPropensity({10: 0.2, 11: 0.5, 12: 0.3})
        l2 = StubPropensity({10: 0.1, 11: 0.25, 12: 0.15})
        t2 = StubPropensity({10: 0.2, 11: 0.15, 12: 0.15})
        e1 = dr_value(data, t1, l1, ZeroRegressor(), bootstrap=0)
        e2 = dr_value(data, t2, l2, ZeroRegressor(), bootstrap=0)
        assert e1.value == pytest.approx(e2.value, abs=1e-12)

    def test_ess_brute_force(self):
        data = self.multi_user_log(n_users=3)
        target = StubPropensity({10: 0.5, 11: 0.3, 12: 0.2})
        logging = StubPropensity({10: 0.2, 11: 0.4, 12: 0.4})
        est = dr_value(data, target, logging, ZeroRegressor(), bootstrap=0)
        sec = data.in_section(SEC)
        w = np.array([target.probability(0, int(s))
                      / logging.probability(0, int(s))
                      for s in sec.story_id[sec.scored]])
        assert est.effective_sample_size == pytest.approx(
            w.sum() ** 2 / (w ** 2).sum(), abs=1e-10)

    def test_coverage_violation(self):
        data = self.multi_user_log()
        prop = StubPropensity({10: 0.4, 11: 0.3, 12: 0.3},
                              floor_stories={10, 11, 12})
        with pytest.raises(CoverageViolation):
            dr_value(data, prop, prop, ZeroRegressor(), bootstrap=0)

    def test_model_term_when_weights_cancel(self):
        # regressor that predicts the logged value exactly: the correction
        # term vanishes and the estimate is the model term alone
        # outcomes that are a pure function of (user, story), so the
        # lookup regressor can reproduce them exactly
        rows = []
        kinds = [OutcomeKind.COMPLETED, OutcomeKind.STARTED,
                 OutcomeKind.VIEWED, OutcomeKind.SKIPPED]
        for u in range(1, 11):
            for d in range(4):
                sid = 10 + (u + d) % 3
                rows.append((u, sid, d, 0, SEC, 1 + d % 3,
                             kinds[(u + sid) % 4]))
        data = make_dataset(rows)
        prop = StubPropensity({10: 1 / 3, 11: 1 / 3, 12: 1 / 3})

        sec = data.in_section(SEC)
        logged = {(int(u), int(s)): float(v) for u, s, v in
                  zip(sec.user_id[sec.scored], sec.story_id[sec.scored],
                      sec.values[sec.scored])}

        class Oracle:
            def predict_logged(self, users, stories):
                return np.array([logged[(int(u), int(s))]
                                 for u, s in zip(users, stories)])

            def predict_pairs(self, users, stories):
                return np.full(len(users), 0.25)

        est = dr_value(data, prop, prop, Oracle(), bootstrap=0)
        assert est.value == pytest.approx(0.25, abs=1e-12)


class TestBootstrap:
    def test_deterministic(self):
        rng = np.random.default_rng(0)
        scores = rng.uniform(size=100)
        users = rng.integers(1, 21, size=100)
        assert bootstrap_se(scores, users, B=200, seed=5) == \
            bootstrap_se(scores, users, B=200, seed=5)

    def test_single_user_degenerate(self):
        scores = np.array([0.1, 0.9, 0.4])
        users = np.array([7, 7, 7])
        assert bootstrap_se(scores, users, B=50, seed=0) == \
            pytest.approx(0.0, abs=1e-12)

    def test_matches_iid_scale(self):
        # one record per user: the clustered bootstrap se approaches the
        # plain standard error of the mean
        rng = np.random.default_rng(1)
        scores = rng.normal(size=400)
        users = np.arange(400)
        se = bootstrap_se(scores, users, B=2000, seed=3)
        ref = scores.std(ddof=1) / np.sqrt(scores.size)
        assert se == pytest.approx(ref, rel=0.15)


class TestComparisons:
    def test_identical_targets_diff_zero(self):
        rows = []
        kinds = [OutcomeKind.COMPLETED, OutcomeKind.VIEWED]
        for u in range(1, 9):
            for d in range(3):
                rows.append((u, 10 + d, d, 0, SEC, 1 + d,
                             kinds[(u + d) % 2]))
        data = make_dataset(rows)
        prop = StubPropensity({10: 0.4, 11: 0.3, 12: 0.3})
        rows_out = compare_policies(data, {"a": prop, "b": prop}, prop,
                                    ZeroRegressor(), B=50)
        a, b, glabel, est, se, lo, hi = rows_out[0]
        assert (a, b, glabel) == ("a", "b", "all")
        assert est == pytest.approx(0.0, abs=1e-12)
        assert lo <= 0.0 <= hi

    def test_groups_restrict_users(self):
        rows = []
        for u in range(1, 9):
            rows.append((u, 10, 0, 0, SEC, 1,
                         OutcomeKind.COMPLETED if u <= 4
                         else OutcomeKind.SKIPPED))
        data = make_dataset(rows)
        prop = StubPropensity({10: 1.0})
        t_half = StubPropensity({10: 0.5})
        out = compare_policies(data, {"t": t_half, "l": prop}, prop,
                               ZeroRegressor(),
                               groups={"top": {1, 2, 3, 4}}, B=10)
        by_group = {r[2]: r[3] for r in out}
        # pairs come out alphabetically: diff = value(l) - value(t), and
        # "t" halves each weight, so the difference is half the group mean
        assert by_group["all"] == pytest.approx(0.25, abs=1e-12)
        assert by_group["top"] == pytest.approx(0.5, abs=1e-12)


class TestSplitsAndChecks:
    def test_heavy_light_partition(self):
        pre = {u: OutcomeVector(total_engagement_all=float(u))
               for u in range(1, 8)}
        groups = heavy_light_split(pre)
        assert groups["heavy"] | groups["light"] == set(range(1, 8))
        assert not groups["heavy"] & groups["light"]
        assert 7 in groups["heavy"] and 1 in groups["light"]
        assert 4 in groups["heavy"]  # median user goes heavy

    def test_scale_mismatch(self):
        with pytest.raises(ScaleMismatch):
            onpolicy_vs_offpolicy_check(1.0, 0.1, 0.9, 0.1,
                                        on_scale="per_user_total",
                                        off_scale="per_interaction")

    def test_z_test(self):
        out = onpolicy_vs_offpolicy_check(1.0, 0.3, 0.4, 0.4)
        assert out["difference"] == pytest.approx(0.6)
        assert out["std_error"] == pytest.approx(0.5)
        assert out["z"] == pytest.approx(1.2)


class TestOutcomeRegressorIntegration:
    def test_oof_predictions_bounded_and_useful(self):
        cfg = WorldConfig(n_users=50, n_stories=20, other_rate=1.0)
        world = make_world(cfg, seed=9)
        pol = {u: world.editorial_policy() for u in world.users}
        data = simulate_period(world, pol, days=21, seed=4)
        reg = fit_outcome_regressor(data, epochs=8)
        assert (reg.oof_ >= 0.0).all() and (reg.oof_ <= 1.0).all()
        # better than the constant predictor on the logged outcomes
        mse_model = float(np.mean((reg.oof_ - reg.y_) ** 2))
        mse_const = float(np.mean((reg.y_.mean() - reg.y_) ** 2))
        assert mse_model < mse_const
        preds = reg.predict_pairs(
            np.array([1, 1]), np.array(world.story_ids()[:2]))
        assert preds.shape == (2,) and (preds >= 0).all()
