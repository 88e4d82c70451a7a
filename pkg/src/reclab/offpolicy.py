"""Doubly robust off-policy evaluation from logged interactions.

Estimates the value of a counterfactual slate policy from logs gathered
under another policy: position effects and propensities come from the
logs, an outcome regressor supplies the model term, and uncertainty is
a user-clustered bootstrap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm
from sklearn.linear_model import Ridge

from .errors import CoverageViolation, NoScorableRecords, ScaleMismatch
from .interactions import RECOMMENDED_SECTION, LogDataset
from .models import MatrixFactorization, dataset_xy
from .policies import (
    PolicySpec,
    exposure_distribution,
    top_k,
    rank_stories,
)
from .interactions import MAX_SLATE_RANK
from .util import rng_for

DEFAULT_FLOOR = 1e-3
CLIP_VIOLATION_FRACTION = 0.20

# every off-policy report carries this header: the outcome model term is
# a ridge regression, substituted for a forest-based regressor
REPORT_HEADER = ("# outcome model: cross-fitted ridge on learned "
                 "representations plus observed covariates")


# ---------------------------------------------------------------------------
# position effects


@dataclass(frozen=True)
class PositionEffectEstimate:
    probabilities: np.ndarray          # length MAX_SLATE_RANK, sums to 1
    never_observed: tuple              # ranks that got floor mass
    smoothed: bool = False

    def vector(self) -> np.ndarray:
        return self.probabilities


def estimate_position_effects(data: LogDataset,
                              section: str = RECOMMENDED_SECTION,
                              n_ranks: int = MAX_SLATE_RANK,
                              floor: float = DEFAULT_FLOOR,
                              monotone: bool = False) -> PositionEffectEstimate:
    """Rank distribution of logged interactions, normalized.

    Interaction ranks are draws from the exposure distribution, so their
    normalized histogram estimates the position-effect vector directly;
    NotShown rows are exposure bookkeeping and are excluded.  Ranks with
    no interactions at all receive floor mass and are flagged.  With
    monotone=True a decreasing pool-adjacent-violators fit is applied.
    """
    sec = data.in_section(section)
    mask = sec.scored & (sec.slate_rank >= 1)
    ranks = sec.slate_rank[mask]
    if ranks.size == 0:
        raise NoScorableRecords("no ranked interactions to estimate from")
    counts = np.bincount(ranks, minlength=n_ranks + 1)[1:n_ranks + 1]
    counts = counts.astype(float)
    never = tuple(int(r + 1) for r in np.flatnonzero(counts == 0))
    v = counts / counts.sum()
    if never:
        v = np.maximum(v, floor)
        v = v / v.sum()
    smoothed = False
    if monotone:
        v = _pava_decreasing(v)
        v = v / v.sum()
        smoothed = True
    return PositionEffectEstimate(v, never, smoothed)


def _pava_decreasing(v: np.ndarray) -> np.ndarray:
    """Pool adjacent violators for a non-increasing fit."""
    vals = list(v.astype(float))
    weights = [1.0] * len(vals)
    blocks = [[x] for x in range(len(vals))]
    i = 0
    while i < len(vals) - 1:
        if vals[i] < vals[i + 1] - 1e-15:
            merged = (vals[i] * weights[i] + vals[i + 1] * weights[i + 1]) \
                / (weights[i] + weights[i + 1])
            vals[i] = merged
            weights[i] += weights[i + 1]
            blocks[i].extend(blocks[i + 1])
            del vals[i + 1], weights[i + 1], blocks[i + 1]
            i = max(i - 1, 0)
        else:
            i += 1
    out = np.empty(len(v))
    for val, members in zip(vals, blocks):
        for m in members:
            out[m] = val
    return out


# ---------------------------------------------------------------------------
# propensity models


class EditorialPropensity:
    """Per-grade empirical story exposure frequencies, floored.

    ê(i, j) is the share of logged exposure events among grade(i) users
    that landed on story j.  Grades absent from the logs fall back to
    the uniform distribution over the catalog and are flagged.
    """

    kind = "editorial"

    def __init__(self, data: LogDataset, grade_of: dict = None,
                 section: str = RECOMMENDED_SECTION,
                 floor: float = DEFAULT_FLOOR):
        self.floor = float(floor)
        self.catalog = tuple(sorted(data.stories))
        self.grade_of = dict(grade_of) if grade_of is not None else \
            {uid: p.grade for uid, p in data.users.items()}
        sec = data.in_section(section)
        table: dict = {}
        for i in range(sec.n_records):
            if not sec.scored[i]:
                continue
            g = self.grade_of.get(int(sec.user_id[i]))
            table.setdefault(g, {})
            sid = int(sec.story_id[i])
            table[g][sid] = table[g].get(sid, 0) + 1
        self.table = {}
        self.floored_stories = {}
        for g, counts in table.items():
            total = sum(counts.values())
            probs = {sid: c / total for sid, c in counts.items()}
            self.floored_stories[g] = frozenset(
                sid for sid in self.catalog if sid not in probs)
            self.table[g] = probs
        self.unseen_grades: set = set()

    def probability(self, user_id: int, story_id: int, day: int = 0) -> float:
        g = self.grade_of.get(user_id)
        probs = self.table.get(g)
        if probs is None:
            self.unseen_grades.add(g)
            return 1.0 / len(self.catalog)
        return max(probs.get(story_id, 0.0), self.floor)

    def at_floor(self, user_id: int, story_id: int, day: int = 0) -> bool:
        probs = self.table.get(self.grade_of.get(user_id))
        return probs is not None and probs.get(story_id, 0.0) < self.floor

    def support(self, user_id: int, day: int = 0) -> dict:
        """Unfloored exposure distribution for the user's grade."""
        g = self.grade_of.get(user_id)
        probs = self.table.get(g)
        if probs is None:
            self.unseen_grades.add(g)
            u = 1.0 / len(self.catalog)
            return {sid: u for sid in self.catalog}
        return probs


class TopKPropensity:
    """Exposure probabilities of a deterministic weekly top-K policy.

    On-slate stories carry the position-effect mass of their rank;
    off-slate stories get the floor.  Slates are cached per (user,
    week); week_of maps a day to the policy's week index.
    """

    kind = "topk"

    def __init__(self, policy: PolicySpec, position_effects,
                 candidates, grade_of: dict,
                 floor: float = DEFAULT_FLOOR, week_of=None):
        self.policy = policy
        self.position_effects = np.asarray(position_effects, dtype=float)
        self.candidates = tuple(sorted(candidates))
        self.grade_of = dict(grade_of)
        self.floor = float(floor)
        self.week_of = week_of if week_of is not None else lambda day: day // 7
        self._cache: dict = {}

    def _slate_dist(self, user_id: int, week: int) -> dict:
        key = (user_id, week)
        if key not in self._cache:
            slate = top_k(
                rank_stories(self.policy, user_id, self.candidates,
                             self.grade_of.get(user_id, 1), week),
                self.policy.slate_size)
            self._cache[key] = exposure_distribution(
                slate, self.position_effects)
        return self._cache[key]

    def probability(self, user_id: int, story_id: int, day: int = 0) -> float:
        dist = self._slate_dist(user_id, self.week_of(day))
        return max(dist.get(story_id, 0.0), self.floor)

    def at_floor(self, user_id: int, story_id: int, day: int = 0) -> bool:
        return story_id not in self._slate_dist(user_id, self.week_of(day))

    def support(self, user_id: int, day: int = 0) -> dict:
        return self._slate_dist(user_id, self.week_of(day))


def editorial_propensity(data: LogDataset, grade_of: dict = None,
                         section: str = RECOMMENDED_SECTION,
                         floor: float = DEFAULT_FLOOR) -> EditorialPropensity:
    return EditorialPropensity(data, grade_of, section, floor)


def topk_propensity(policy: PolicySpec, position_effects, candidates,
                    grade_of: dict, floor: float = DEFAULT_FLOOR,
                    week_of=None) -> TopKPropensity:
    return TopKPropensity(policy, position_effects, candidates, grade_of,
                          floor, week_of)


# ---------------------------------------------------------------------------
# outcome regressor


class OutcomeRegressor:
    """Cross-fitted ridge on learned latent representations.

    Features per (user, story): Θ_i ⊕ Λ_j ⊕ Θ_i∘Λ_j plus grade and
    channel dummies.  Logged records receive held-out-fold predictions;
    counterfactual pairs average the fold models.  Everything is
    clipped to [0, 1].
    """

    def __init__(self, data: LogDataset, k: int = 4, l2: float = 1e-4,
                 epochs: int = 15, n_folds: int = 5,
                 ridge_alpha: float = 1.0, seed: int = 0,
                 section: str = None):
        sub = data.in_section(section) if section else data
        X, y, _ = dataset_xy(sub)
        if y.size == 0:
            raise NoScorableRecords("cannot fit a regressor on empty logs")
        self.mf = MatrixFactorization(k=k, l2=l2, epochs=epochs,
                                      seed=seed, early_stop_patience=0)
        self.mf.fit(X, y)
        self._grades = sorted({p.grade for p in data.users.values()})
        self._channels = sorted({p.channel for p in data.users.values()})
        self._profiles = data.users
        feats = self._features(X[:, 0], X[:, 1])
        n = y.size
        idx = rng_for(seed, "regressor-folds").permutation(n)
        folds = np.array_split(idx, max(1, min(n_folds, n)))
        self.models = []
        self.oof_ = np.zeros(n)
        for hold in folds:
            train = np.setdiff1d(idx, hold)
            reg = Ridge(alpha=ridge_alpha).fit(feats[train], y[train])
            self.models.append(reg)
            self.oof_[hold] = reg.predict(feats[hold])
        self.oof_ = np.clip(self.oof_, 0.0, 1.0)
        self.logged_keys_ = {(int(u), int(s)): i
                             for i, (u, s) in enumerate(X)}
        self.X_, self.y_ = X, y

    def _features(self, user_ids, story_ids):
        user_ids = np.asarray(user_ids)
        story_ids = np.asarray(story_ids)
        k = self.mf.k
        n = user_ids.size
        theta = np.zeros((n, k))
        lam = np.zeros((n, k))
        for i, (u, s) in enumerate(zip(user_ids, story_ids)):
            ui = self.mf.user_index_.get(int(u))
            si = self.mf.story_index_.get(int(s))
            if ui is not None:
                theta[i] = self.mf.theta_[ui]
            if si is not None:
                lam[i] = self.mf.lam_[si]
        cols = [theta, lam, theta * lam]
        for g in self._grades[1:]:
            cols.append(np.array([
                1.0 if (int(u) in self._profiles
                        and self._profiles[int(u)].grade == g) else 0.0
                for u in user_ids])[:, None])
        for c in self._channels[1:]:
            cols.append(np.array([
                1.0 if (int(u) in self._profiles
                        and self._profiles[int(u)].channel == c) else 0.0
                for u in user_ids])[:, None])
        return np.hstack(cols)

    def predict_pairs(self, user_ids, story_ids) -> np.ndarray:
        """Fold-averaged clipped predictions for arbitrary pairs."""
        feats = self._features(user_ids, story_ids)
        pred = np.mean([m.predict(feats) for m in self.models], axis=0)
        return np.clip(pred, 0.0, 1.0)

    def predict_logged(self, user_ids, story_ids) -> np.ndarray:
        """Held-out-fold predictions where the pair was in the training
        logs, fold average otherwise."""
        out = self.predict_pairs(user_ids, story_ids)
        for i, (u, s) in enumerate(zip(user_ids, story_ids)):
            j = self.logged_keys_.get((int(u), int(s)))
            if j is not None:
                out[i] = self.oof_[j]
        return out


def fit_outcome_regressor(data: LogDataset, **kwargs) -> OutcomeRegressor:
    return OutcomeRegressor(data, **kwargs)


# ---------------------------------------------------------------------------
# doubly robust value


@dataclass(frozen=True)
class DrEstimate:
    value: float
    std_error: float
    n_logs: int
    min_weight: float
    max_weight: float
    effective_sample_size: float
    clipped_fraction: float
    scale: str = "per_interaction"
    header: str = REPORT_HEADER
    scores: np.ndarray = field(default=None, repr=False, compare=False)
    score_users: np.ndarray = field(default=None, repr=False, compare=False)

    def ci(self, level: float = 0.95):
        z = norm.ppf(0.5 + level / 2.0)
        return (self.value - z * self.std_error,
                self.value + z * self.std_error)


def _dr_scores(data: LogDataset, target, logging_model, regressor,
               section: str = RECOMMENDED_SECTION):
    sec = data.in_section(section)
    mask = sec.scored
    if not mask.any():
        raise NoScorableRecords("no scorable logs in the section")
    users = sec.user_id[mask]
    stories = sec.story_id[mask]
    days = sec.day[mask]
    y = sec.values[mask].astype(float)

    yhat = regressor.predict_logged(users, stories)
    e_pi = np.array([target.probability(int(u), int(s), int(d))
                     for u, s, d in zip(users, stories, days)])
    e_t = np.array([logging_model.probability(int(u), int(s), int(d))
                    for u, s, d in zip(users, stories, days)])
    clipped = np.array([logging_model.at_floor(int(u), int(s), int(d))
                        for u, s, d in zip(users, stories, days)])
    w = e_pi / e_t

    # model term: E over the target policy's support, cached per context
    model_term = np.empty(y.size)
    cache: dict = {}
    for i, (u, d) in enumerate(zip(users, days)):
        key = (int(u), target.week_of(int(d))
               if hasattr(target, "week_of") else 0)
        if key not in cache:
            dist = target.support(int(u), int(d))
            sids = np.fromiter(dist.keys(), dtype=np.int64, count=len(dist))
            probs = np.fromiter(dist.values(), dtype=float, count=len(dist))
            preds = regressor.predict_pairs(
                np.full(sids.size, int(u), dtype=np.int64), sids)
            cache[key] = float(probs @ preds)
        model_term[i] = cache[key]

    scores = w * (y - yhat) + model_term
    return scores, users, w, clipped


def dr_value(data: LogDataset, target, logging_model, regressor,
             section: str = RECOMMENDED_SECTION,
             bootstrap: int = 500, seed: int = 0,
             max_clipped_fraction: float = CLIP_VIOLATION_FRACTION) \
        -> DrEstimate:
    """Doubly robust per-interaction value of a target policy.

    Q̂ = mean over logs of  (ê_π/ê_T)(y − ŷ) + E_π[ŷ].  Period totals
    multiply by the period's expected interaction count; this function
    never rescales.  Raises CoverageViolation when too many logs sit at
    the logging propensity floor.
    """
    scores, users, w, clipped = _dr_scores(data, target, logging_model,
                                           regressor, section)
    clipped_frac = float(clipped.mean())
    if clipped_frac > max_clipped_fraction:
        raise CoverageViolation(
            f"{clipped_frac:.1%} of logs at the propensity floor "
            f"(limit {max_clipped_fraction:.0%})")
    se = bootstrap_se(scores, users, B=bootstrap, seed=seed) \
        if bootstrap else 0.0
    ess = float(w.sum() ** 2 / (w ** 2).sum())
    return DrEstimate(value=float(scores.mean()), std_error=se,
                      n_logs=int(scores.size),
                      min_weight=float(w.min()), max_weight=float(w.max()),
                      effective_sample_size=ess,
                      clipped_fraction=clipped_frac,
                      scores=scores, score_users=np.asarray(users))


def bootstrap_se(scores, users, B: int = 500, seed: int = 0) -> float:
    """User-clustered bootstrap standard error of the mean score."""
    scores = np.asarray(scores, dtype=float)
    users = np.asarray(users)
    uniq, inv = np.unique(users, return_inverse=True)
    sums = np.bincount(inv, weights=scores)
    counts = np.bincount(inv).astype(float)
    rng = rng_for(seed, "dr-bootstrap")
    reps = np.empty(B)
    m = uniq.size
    for b in range(B):
        pick = rng.integers(0, m, size=m)
        reps[b] = sums[pick].sum() / counts[pick].sum()
    return float(reps.std(ddof=1))


def compare_policies(data: LogDataset, targets: dict, logging_model,
                     regressor, groups: dict = None,
                     section: str = RECOMMENDED_SECTION,
                     B: int = 500, seed: int = 0):
    """Pairwise DR value differences with paired cluster-bootstrap CIs.

    targets maps a policy label to its propensity model; groups
    optionally maps a group label to a set of user ids (e.g. heavy and
    light users split at the pre-period engagement median).  Returns
    rows (policy_a, policy_b, group, estimate, se, ci_lo, ci_hi).
    """
    names = sorted(targets)
    per_policy = {}
    users_ref = None
    for name in names:
        scores, users, _, _ = _dr_scores(data, targets[name],
                                         logging_model, regressor, section)
        per_policy[name] = scores
        users_ref = users
    group_map = {"all": None}
    if groups:
        group_map.update(groups)

    rows = []
    for gi, (glabel, members) in enumerate(group_map.items()):
        if members is None:
            sel = np.ones(users_ref.size, dtype=bool)
        else:
            sel = np.isin(users_ref, list(members))
        if not sel.any():
            continue
        users_g = users_ref[sel]
        uniq, inv = np.unique(users_g, return_inverse=True)
        counts = np.bincount(inv).astype(float)
        sums = {n: np.bincount(inv, weights=per_policy[n][sel])
                for n in names}
        rng = rng_for(seed, "compare-bootstrap", glabel)
        m = uniq.size
        picks = rng.integers(0, m, size=(B, m))
        for ai in range(len(names)):
            for bi in range(ai + 1, len(names)):
                a, b = names[ai], names[bi]
                diff_sum = sums[a] - sums[b]
                est = float(diff_sum.sum() / counts.sum())
                reps = np.array([diff_sum[p].sum() / counts[p].sum()
                                 for p in picks])
                se = float(reps.std(ddof=1))
                lo, hi = np.percentile(reps, [2.5, 97.5])
                rows.append((a, b, glabel, est, se, float(lo), float(hi)))
    return rows


def heavy_light_split(pre_outcomes: dict) -> dict:
    """Users at or above the pre-period engagement median vs below."""
    uids = sorted(pre_outcomes)
    vals = np.array([pre_outcomes[u].total_engagement_all for u in uids])
    med = float(np.median(vals))
    heavy = {u for u, v in zip(uids, vals) if v >= med}
    return {"heavy": heavy, "light": set(uids) - heavy}


def onpolicy_vs_offpolicy_check(on_estimate: float, on_se: float,
                                off_estimate: float, off_se: float,
                                on_scale: str = "per_interaction",
                                off_scale: str = "per_interaction"):
    """z-test of the difference between on- and off-policy estimates.

    Refuses to compare estimates on different outcome scales instead of
    rescaling silently.
    """
    if on_scale != off_scale:
        raise ScaleMismatch(
            f"cannot compare {on_scale!r} against {off_scale!r}")
    d = on_estimate - off_estimate
    se = float(np.hypot(on_se, off_se))
    z = d / se if se > 0 else 0.0
    p = float(2.0 * norm.sf(abs(z))) if se > 0 else 1.0
    return {"difference": float(d), "std_error": se, "z": float(z),
            "p_value": p}
