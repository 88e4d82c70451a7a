"""Synthetic worlds with known ground truth.

A world bundles a user population, a story catalog, true expected
engagement for every (user, story) pair, and an activity process.  Logs
generated here feed every estimator in the package, and
``true_policy_value`` is the oracle those estimators are judged against.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy.special import expit

from .errors import ConfigError
from .interactions import (
    RECOMMENDED_SECTION,
    OutcomeKind,
    ENGAGEMENT_VALUE,
    _KIND_CODE,
    UserProfile,
    StoryMeta,
    LogDataset,
)
from .models import TrainConfig, dataset_xy, MatrixFactorization, \
    TwoWayFixedEffects, MeanModel
from .policies import (
    SLATE_SIZE,
    PolicySpec,
    SlateState,
    DayActivity,
    weekly_refresh,
    daily_update,
)
from .util import derive_seed, rng_for


OTHER_SECTION = "other"

# other-section records get session ids in a disjoint range, so a story
# drawn both in the test section and elsewhere on the same day cannot
# collide on the (user, story, day, session) key
OTHER_SESSION_BASE = 100000

# feasible range of the exact-mean outcome rule; outside it we clamp
MU_LO = 0.05
MU_HI = 0.95


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class WorldConfig:
    """Dimensions and behavioural knobs of a synthetic world."""

    n_users: int = 300
    n_stories: int = 60
    latent_dim: int = 1
    n_segments: int = 2          # 1 = homogeneous population
    niche_user_share: float = 0.3
    niche_story_share: float = 0.4
    n_grades: int = 3
    channel_probs: tuple = (0.35, 0.40, 0.25)

    # ground-truth scales (logit space)
    beta0: float = -0.4
    user_effect_sd: float = 0.5
    story_effect_sd: float = 0.5
    latent_scale: float = 1.0
    latent_noise_sd: float = 0.15

    # activity process
    activity_prob_lo: float = 0.5
    activity_prob_hi: float = 0.9
    rate_log_mean: float = 0.6
    rate_log_sd: float = 0.4
    other_rate: float = 1.0

    # exposure over slate ranks; geometric decay by default
    position_decay: float = 0.7
    slate_size: int = SLATE_SIZE

    # weekly rotation step of editorial scripts through the catalog
    editorial_noise_sd: float = 0.5

    # behavioural switches
    rerank_daily: bool = False
    elastic_usage: bool = False
    elastic_coef: float = 1.0
    log_not_shown: bool = True

    def validate(self):
        if min(self.n_users, self.n_stories, self.latent_dim,
               self.n_grades, self.slate_size) <= 0:
            raise ConfigError("world dimensions must be positive")
        if not 0.0 <= self.niche_user_share <= 1.0:
            raise ConfigError("niche_user_share must be in [0, 1]")
        if not 0.0 <= self.niche_story_share <= 1.0:
            raise ConfigError("niche_story_share must be in [0, 1]")
        if self.n_segments not in (1, 2):
            raise ConfigError("n_segments must be 1 or 2")
        if abs(sum(self.channel_probs) - 1.0) > 1e-9:
            raise ConfigError("channel_probs must sum to 1")
        if not 0.0 < self.position_decay <= 1.0:
            raise ConfigError("position_decay must be in (0, 1]")
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "WorldConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad world config: {exc}") from None
        known = WorldConfig.__dataclass_fields__
        unknown = set(raw) - set(known)
        if unknown:
            raise ConfigError(f"unknown world config keys: {sorted(unknown)}")
        if "channel_probs" in raw:
            raw["channel_probs"] = tuple(raw["channel_probs"])
        return WorldConfig(**raw).validate()


@dataclass(frozen=True)
class GroundTruth:
    """True preference structure; mu(i, j) is exact expected engagement."""

    beta0: float
    user_vectors: dict      # user_id -> np.ndarray of shape (k*,)
    story_vectors: dict     # story_id -> np.ndarray
    user_effects: dict      # user_id -> float
    story_effects: dict     # story_id -> float
    user_segment: dict      # user_id -> 0 (mainstream) / 1 (niche)
    story_segment: dict

    def mu(self, user_id: int, story_id: int) -> float:
        s = (self.beta0
             + self.user_effects[user_id]
             + self.story_effects[story_id]
             + float(self.user_vectors[user_id]
                     @ self.story_vectors[story_id]))
        return float(expit(s))

    def mu_row(self, user_id: int, story_ids) -> np.ndarray:
        z = np.array([self.story_vectors[j] for j in story_ids])
        g = np.array([self.story_effects[j] for j in story_ids])
        s = (self.beta0 + self.user_effects[user_id]
             + g + z @ self.user_vectors[user_id])
        return expit(s)


@dataclass(frozen=True)
class ActivityModel:
    """Per-user activity probabilities and Poisson interaction rates."""

    active_prob: dict   # user_id -> daily activity probability
    rate: dict          # user_id -> Poisson mean of section interactions


@dataclass(frozen=True)
class World:
    config: WorldConfig
    seed: int
    truth: GroundTruth
    activity: ActivityModel
    users: dict                     # user_id -> UserProfile
    stories: dict                   # story_id -> StoryMeta
    editorial_script: dict          # (grade, week) -> tuple of story ids
    editorial_cycle: int            # weeks before the rotation repeats
    position_effects: np.ndarray    # normalised over slate_size ranks
    baseline_value: float           # mean editorial engagement per draw

    def editorial_policy(self) -> PolicySpec:
        return PolicySpec(kind="editorial", script=self.editorial_script,
                          slate_size=self.config.slate_size)

    def editorial_week(self, week: int) -> int:
        return week % self.editorial_cycle

    def story_ids(self):
        return sorted(self.stories)

    def user_ids(self):
        return sorted(self.users)


# ---------------------------------------------------------------------------
# outcome rule

# Engagement draws follow a three-stage cascade: view with probability q,
# start given view with q, complete given start with q, where q solves
#   0.5 q^3 + 0.2 q^2 + 0.3 q = mu
# so that the expected engagement value equals mu exactly on (0, 1).
# The cubic is strictly increasing on [0, 1], so bisection suffices.


def cascade_q(mu):
    """Stage probability q such that the draw's expected value is mu."""
    mu = np.asarray(mu, dtype=float)
    clipped = np.clip(mu, MU_LO, MU_HI)
    lo = np.zeros_like(clipped)
    hi = np.ones_like(clipped)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        val = 0.5 * mid ** 3 + 0.2 * mid ** 2 + 0.3 * mid
        below = val < clipped
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    q = 0.5 * (lo + hi)
    return q if q.ndim else float(q)


def outcome_probs(mu):
    """Exact draw probabilities (completed, started, viewed, skipped)."""
    q = np.asarray(cascade_q(mu), dtype=float)
    return (q ** 3, q ** 2 * (1 - q), q * (1 - q), 1 - q)


def expected_value(mu) -> float:
    """Expected engagement value of a draw; equals mu on the feasible range."""
    pc, ps, pv, _ = outcome_probs(mu)
    return float(pc * ENGAGEMENT_VALUE[OutcomeKind.COMPLETED]
                 + ps * ENGAGEMENT_VALUE[OutcomeKind.STARTED]
                 + pv * ENGAGEMENT_VALUE[OutcomeKind.VIEWED])


def clamped(mu) -> bool:
    """True when mu falls outside the exact-mean range and gets clipped."""
    return bool(mu < MU_LO or mu > MU_HI)


def draw_outcome(u: float, q: float) -> OutcomeKind:
    """Map a uniform draw u to an outcome at stage probability q."""
    if u < 1.0 - q:
        return OutcomeKind.SKIPPED
    if u < 1.0 - q * q:
        return OutcomeKind.VIEWED
    if u < 1.0 - q ** 3:
        return OutcomeKind.STARTED
    return OutcomeKind.COMPLETED


# ---------------------------------------------------------------------------
# world construction


def position_effect_vector(decay: float, size: int) -> np.ndarray:
    v = decay ** np.arange(size)
    return v / v.sum()


def make_world(config: WorldConfig, seed: int) -> World:
    """Build a deterministic synthetic world from a config and a seed.

    With two segments, niche users carry a flipped latent sign so the
    stories they prefer are unpopular among mainstream users.  Editorial
    scripts target mainstream taste and rotate weekly through the whole
    catalog, so every story is eventually exposed.
    """
    config.validate()
    rng = rng_for(seed, "world")
    k = config.latent_dim

    user_ids = list(range(1, config.n_users + 1))
    story_ids = list(range(1001, 1001 + config.n_stories))

    n_niche_u = int(round(config.niche_user_share * config.n_users)) \
        if config.n_segments == 2 else 0
    n_niche_s = int(round(config.niche_story_share * config.n_stories)) \
        if config.n_segments == 2 else 0
    niche_users = set(rng.choice(user_ids, size=n_niche_u, replace=False)
                      .tolist()) if n_niche_u else set()
    niche_stories = set(rng.choice(story_ids, size=n_niche_s, replace=False)
                        .tolist()) if n_niche_s else set()

    user_vectors, user_effects, user_segment = {}, {}, {}
    users = {}
    channels = ("B2B", "B2C", "Paid")
    for uid in user_ids:
        seg = 1 if uid in niche_users else 0
        sign = -1.0 if seg else 1.0
        vec = sign * config.latent_scale * np.ones(k) \
            + rng.normal(0.0, config.latent_noise_sd, size=k)
        user_vectors[uid] = vec
        user_effects[uid] = float(rng.normal(0.0, config.user_effect_sd))
        user_segment[uid] = seg
        users[uid] = UserProfile(
            user_id=uid,
            grade=int(rng.integers(1, config.n_grades + 1)),
            channel=channels[int(rng.choice(3, p=config.channel_probs))],
            registration_day=0,
        )

    story_vectors, story_effects, story_segment = {}, {}, {}
    stories = {}
    for sid in story_ids:
        seg = 1 if sid in niche_stories else 0
        sign = -1.0 if seg else 1.0
        vec = sign * np.ones(k) + rng.normal(0.0, config.latent_noise_sd,
                                             size=k)
        story_vectors[sid] = vec
        story_effects[sid] = float(rng.normal(0.0, config.story_effect_sd))
        story_segment[sid] = seg
        lo = float(rng.uniform(2.0, 6.0))
        stories[sid] = StoryMeta(story_id=sid, collection_tag="base",
                                 minutes_lo=round(lo, 1),
                                 minutes_hi=round(lo + 2.0, 1))

    truth = GroundTruth(beta0=config.beta0, user_vectors=user_vectors,
                        story_vectors=story_vectors,
                        user_effects=user_effects,
                        story_effects=story_effects,
                        user_segment=user_segment,
                        story_segment=story_segment)

    active_prob = {uid: float(rng.uniform(config.activity_prob_lo,
                                          config.activity_prob_hi))
                   for uid in user_ids}
    rate = {uid: float(rng.lognormal(config.rate_log_mean,
                                     config.rate_log_sd))
            for uid in user_ids}
    activity = ActivityModel(active_prob=active_prob, rate=rate)

    # editorial taste: mean mu among mainstream users, plus per-grade noise
    mainstream = [u for u in user_ids if user_segment[u] == 0] or user_ids
    sample = mainstream[:min(50, len(mainstream))]
    mean_mu = np.zeros(len(story_ids))
    for uid in sample:
        mean_mu += truth.mu_row(uid, story_ids)
    mean_mu /= len(sample)

    cycle = max(1, math.ceil(config.n_stories / config.slate_size))
    script = {}
    for grade in range(1, config.n_grades + 1):
        g_rng = rng_for(seed, "editorial", grade)
        scores = mean_mu + g_rng.normal(0.0, config.editorial_noise_sd,
                                        size=len(story_ids))
        base = [sid for _, sid in
                sorted(zip(-scores, story_ids))]
        for week in range(cycle):
            shift = (week * config.slate_size) % len(base)
            script[(grade, week)] = tuple(base[shift:] + base[:shift])

    pos = position_effect_vector(config.position_decay, config.slate_size)

    # mean engagement per editorial draw, used as the elastic-usage anchor
    total = 0.0
    for uid in user_ids:
        slate = script[(users[uid].grade, 0)][:config.slate_size]
        total += float(pos @ truth.mu_row(uid, slate))
    baseline = total / len(user_ids)

    return World(config=config, seed=seed, truth=truth, activity=activity,
                 users=users, stories=stories, editorial_script=script,
                 editorial_cycle=cycle, position_effects=pos,
                 baseline_value=baseline)


# ---------------------------------------------------------------------------
# simulation


def _resolve_week(world: World, policy: PolicySpec, week: int) -> int:
    if policy.kind == "editorial":
        return world.editorial_week(week)
    return week


def simulate_period(world: World, policies: dict, days: int, seed: int,
                    start_day: int = 0, position_effects=None,
                    return_launches: bool = False):
    """Generate an interaction log under a per-user policy assignment.

    Weeks are aligned to absolute day numbers (day // 7), so editorial
    rotations continue across consecutive periods.  Within an active day,
    draws are grouped into sessions by occurrence: the k-th draw of the
    same story that day lands in session k-1, so every Poisson draw is
    logged and the oracle stays exact.  When configured, ranks shallower
    than the deepest touched rank in a session that received no
    interaction there are logged as NotShown.
    """
    missing = [u for u in world.users if u not in policies]
    if missing:
        raise ConfigError(f"no policy for users {missing[:5]}")
    cfg = world.config
    pos = np.asarray(position_effects if position_effects is not None
                     else world.position_effects, dtype=float)

    col_u, col_s, col_d, col_sess = [], [], [], []
    col_sec, col_rank, col_out = [], [], []
    launches = set()
    story_ids = world.story_ids()
    catalog_arr = np.array(story_ids)
    sid_index = {sid: i for i, sid in enumerate(story_ids)}

    for uid in world.user_ids():
        policy = policies[uid]
        rng = rng_for(seed, "user", uid)
        # stage probabilities for every catalog story, solved once per user
        q_row = cascade_q(world.truth.mu_row(uid, story_ids))
        grade = world.users[uid].grade
        a_prob = world.activity.active_prob[uid]
        base_rate = world.activity.rate[uid]
        state: SlateState | None = None
        week = None
        eng_sum, eng_n = 0.0, 0

        for day in range(start_day, start_day + days):
            w = day // 7
            if w != week:
                week = w
                state = weekly_refresh(policy, uid, story_ids, grade,
                                       week=_resolve_week(world, policy, w))
            active = rng.uniform() < a_prob
            if not active:
                if cfg.rerank_daily:
                    state = daily_update(state, DayActivity(active=False),
                                         slate_size=cfg.slate_size)
                continue
            launches.add(uid)

            rate = base_rate
            if cfg.elastic_usage and eng_n > 0:
                factor = 1.0 + cfg.elastic_coef * (eng_sum / eng_n
                                                   - world.baseline_value)
                rate = base_rate * min(max(factor, 0.2), 3.0)
            n_draws = rng.poisson(rate)

            slate = state.slate
            started_today, completed_today = set(), set()
            if len(slate) and n_draws:
                p = pos[:len(slate)]
                p = p / p.sum()
                ranks = rng.choice(len(slate), size=n_draws, p=p)
                occurrences: dict[int, int] = {}
                sess_ranks: dict[int, set] = {}
                for r in ranks:
                    r = int(r)
                    sid = slate[r]
                    sess = occurrences.get(sid, 0)
                    occurrences[sid] = sess + 1
                    sess_ranks.setdefault(sess, set()).add(r)
                    out = draw_outcome(rng.uniform(), q_row[sid_index[sid]])
                    col_u.append(uid)
                    col_s.append(sid)
                    col_d.append(day)
                    col_sess.append(sess)
                    col_sec.append(RECOMMENDED_SECTION)
                    col_rank.append(r + 1)
                    col_out.append(out)
                    eng_sum += ENGAGEMENT_VALUE[out]
                    eng_n += 1
                    if out in (OutcomeKind.STARTED, OutcomeKind.COMPLETED):
                        started_today.add(sid)
                    if out is OutcomeKind.COMPLETED:
                        completed_today.add(sid)
                if cfg.log_not_shown:
                    # slates carry no duplicates, so "rank untouched in
                    # this session" also means the story key is free
                    for sess, touched in sess_ranks.items():
                        for r in range(max(touched)):
                            if r in touched:
                                continue
                            col_u.append(uid)
                            col_s.append(slate[r])
                            col_d.append(day)
                            col_sess.append(sess)
                            col_sec.append(RECOMMENDED_SECTION)
                            col_rank.append(r + 1)
                            col_out.append(OutcomeKind.NOT_SHOWN)

            n_other = rng.poisson(cfg.other_rate)
            if n_other:
                picks = rng.choice(catalog_arr, size=n_other)
                occ_other: dict[int, int] = {}
                for sid in picks:
                    sid = int(sid)
                    sess = occ_other.get(sid, 0)
                    occ_other[sid] = sess + 1
                    out = draw_outcome(rng.uniform(), q_row[sid_index[sid]])
                    col_u.append(uid)
                    col_s.append(sid)
                    col_d.append(day)
                    col_sess.append(OTHER_SESSION_BASE + sess)
                    col_sec.append(OTHER_SECTION)
                    col_rank.append(-1)
                    col_out.append(out)
                    eng_sum += ENGAGEMENT_VALUE[out]
                    eng_n += 1

            if cfg.rerank_daily:
                state = daily_update(
                    state,
                    DayActivity(active=True,
                                started=frozenset(started_today),
                                completed=frozenset(completed_today)),
                    slate_size=cfg.slate_size)

    data = LogDataset.from_columns(
        user_id=np.array(col_u, dtype=np.int64),
        story_id=np.array(col_s, dtype=np.int64),
        day=np.array(col_d, dtype=np.int64),
        session_id=np.array(col_sess, dtype=np.int64),
        section=np.array(col_sec, dtype="<U32"),
        slate_rank=np.array(col_rank, dtype=np.int64),
        outcome=np.array([_KIND_CODE[o] for o in col_out], dtype=np.int8),
        users=world.users,
        stories=world.stories,
    )
    if return_launches:
        return data, launches
    return data


# ---------------------------------------------------------------------------
# experiments


@dataclass(frozen=True)
class ExperimentPlan:
    """Two-arm randomized experiment definition."""

    seed: int = 0
    assignment_prob: float = 0.5
    duration_days: int = 14
    pre_days: int = 28
    treatment_policy: str | PolicySpec = "personalized"
    control_policy: str | PolicySpec = "editorial"
    section: str = RECOMMENDED_SECTION
    eligible_users: tuple | None = None
    train_config: TrainConfig | None = None

    def validate(self):
        if not 0.0 < self.assignment_prob < 1.0:
            raise ConfigError("assignment_prob must be in (0, 1)")
        if self.duration_days <= 0 or self.pre_days < 0:
            raise ConfigError("durations must be positive")
        return self


@dataclass(frozen=True)
class ExperimentResult:
    pre: LogDataset
    experiment: LogDataset
    assignment: dict            # user_id -> 1 treated / 0 control
    launched: frozenset         # users who opened the app in the period
    policies: dict              # arm label -> PolicySpec


def assign_arms(users, seed: int, prob: float) -> dict:
    """Deterministic Bernoulli(prob) arm per user keyed on (seed, user)."""
    return {uid: int(rng_for(seed, "assign", uid).uniform() < prob)
            for uid in users}


_POLICY_MODEL = {"personalized": MatrixFactorization,
                 "popularity": TwoWayFixedEffects,
                 "mean": MeanModel}


def resolve_policy(world: World, name, pre: LogDataset | None,
                   config: TrainConfig | None, seed: int) -> PolicySpec:
    """Turn a policy name into a concrete PolicySpec, training if needed."""
    if isinstance(name, PolicySpec):
        return name
    if name == "editorial":
        return world.editorial_policy()
    if name not in _POLICY_MODEL:
        raise ConfigError(f"unknown policy {name!r}")
    if pre is None or pre.n_records == 0:
        raise ConfigError(f"policy {name!r} needs pre-period data to train")
    cfg = config or TrainConfig(epochs=15, early_stop_patience=3,
                                k_grid=(4,), l2_grid=(1e-4,), seed=seed)
    cls = _POLICY_MODEL[name]
    kwargs = dict(l2=cfg.l2_grid[0], learning_rate=cfg.learning_rate,
                  epochs=cfg.epochs, batch_size=cfg.batch_size,
                  seed=derive_seed(seed, "policy-model", name),
                  early_stop_patience=cfg.early_stop_patience)
    if cls is MatrixFactorization:
        kwargs["k"] = cfg.k_grid[0]
    model = cls(**kwargs)
    X, y, _ = dataset_xy(pre, include_skipped=cfg.include_skipped)
    model.fit(X, y)
    kind = "personalized" if name == "personalized" else "popularity"
    return PolicySpec(kind=kind, model=model,
                      slate_size=world.config.slate_size)


def run_experiment(world: World, plan: ExperimentPlan) -> ExperimentResult:
    """Pre-period under editorial, then arm-specific policies in the section.

    The personalized treatment model is trained on the pre-period log.
    Assignment is a deterministic function of (plan seed, user id).
    """
    plan.validate()
    editorial = world.editorial_policy()
    pre_seed = derive_seed(plan.seed, "pre-period")
    pre = simulate_period(world, {u: editorial for u in world.users},
                          days=plan.pre_days, seed=pre_seed) \
        if plan.pre_days > 0 else LogDataset.empty(world.users, world.stories)

    eligible = list(plan.eligible_users) if plan.eligible_users is not None \
        else world.user_ids()
    assignment = assign_arms(eligible, plan.seed, plan.assignment_prob)

    t_policy = resolve_policy(world, plan.treatment_policy, pre,
                              plan.train_config, plan.seed)
    c_policy = resolve_policy(world, plan.control_policy, pre,
                              plan.train_config, plan.seed)
    per_user = {}
    for uid in world.users:
        arm = assignment.get(uid)
        per_user[uid] = t_policy if arm == 1 else c_policy \
            if arm == 0 else editorial

    exp_seed = derive_seed(plan.seed, "experiment-period")
    exp, launched = simulate_period(world, per_user,
                                    days=plan.duration_days, seed=exp_seed,
                                    start_day=plan.pre_days,
                                    return_launches=True)
    return ExperimentResult(pre=pre, experiment=exp, assignment=assignment,
                            launched=frozenset(launched),
                            policies={"treatment": t_policy,
                                      "control": c_policy})


# ---------------------------------------------------------------------------
# oracle


def true_policy_value(world: World, policy: PolicySpec, users, days: int,
                      start_day: int = 0, position_effects=None,
                      per_interaction: bool = False) -> float:
    """Exact expected engagement under a static weekly-slate policy.

    Q_i = sum over days of  a_i * theta_i * sum_r pos_r * mu(i, slate_w[r]),
    where a_i is the daily activity probability and theta_i the Poisson
    interaction rate.  Requires rerank_daily off; with daily reranking the
    slate path is random and no closed form exists.
    """
    if world.config.rerank_daily:
        raise ConfigError("oracle requires rerank_daily = False")
    pos = np.asarray(position_effects if position_effects is not None
                     else world.position_effects, dtype=float)
    story_ids = world.story_ids()

    total = 0.0
    weight = 0.0
    for uid in users:
        grade = world.users[uid].grade
        a = world.activity.active_prob[uid]
        th = world.activity.rate[uid]
        # count days per absolute week inside the window
        per_week: dict[int, int] = {}
        for day in range(start_day, start_day + days):
            per_week[day // 7] = per_week.get(day // 7, 0) + 1
        for w, n_days in per_week.items():
            state = weekly_refresh(policy, uid, story_ids, grade,
                                   week=_resolve_week(world, policy, w))
            slate = state.slate
            p = pos[:len(slate)]
            p = p / p.sum()
            v = float(p @ world.truth.mu_row(uid, slate))
            total += n_days * a * th * v
            weight += n_days * a * th
    if per_interaction:
        return total / weight if weight > 0 else float("nan")
    return total


def sample_interaction_log(world: World, seed: int,
                           interactions_per_user: int = 80,
                           n_days: int = 60) -> LogDataset:
    """Flat log for offline model fitting: uniform story picks, no slates.

    Draws outcomes at true mu; colliding (user, story, day) picks are
    dropped, so per-user counts can fall slightly short of the target.
    """
    col_u, col_s, col_d, col_out = [], [], [], []
    story_arr = np.array(world.story_ids())
    for uid in world.user_ids():
        rng = rng_for(seed, "flat-log", uid)
        picks = rng.choice(story_arr, size=interactions_per_user)
        days = rng.integers(0, n_days, size=interactions_per_user)
        seen = set()
        for sid, day in zip(picks, days):
            key = (int(sid), int(day))
            if key in seen:
                continue
            seen.add(key)
            q = cascade_q(world.truth.mu(uid, int(sid)))
            out = draw_outcome(rng.uniform(), q)
            col_u.append(uid)
            col_s.append(int(sid))
            col_d.append(int(day))
            col_out.append(out)
    n = len(col_u)
    return LogDataset.from_columns(
        user_id=np.array(col_u, dtype=np.int64),
        story_id=np.array(col_s, dtype=np.int64),
        day=np.array(col_d, dtype=np.int64),
        session_id=np.array(col_d, dtype=np.int64),
        section=np.full(n, OTHER_SECTION, dtype="<U32"),
        slate_rank=np.full(n, -1, dtype=np.int64),
        outcome=np.array([_KIND_CODE[o] for o in col_out], dtype=np.int8),
        users=world.users,
        stories=world.stories,
    )
