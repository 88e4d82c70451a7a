"""On-policy analysis of a two-arm experiment.

Covers per-user outcome construction, the three ATE estimators
(difference in means, regression-adjusted, AIPW), the one-sided rank-sum
test, subgroup and score-regression heterogeneity, and the diagnostic
tables: engagement by interaction rank, session lengths, impression
buckets, niche exposure, covariate balance, minimum detectable effect,
and model calibration.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm
import statsmodels.api as sm

from .errors import (
    DegenerateArm,
    EmptyGroup,
    PropensityOutOfRange,
    RankDeficient,
)
from .interactions import (
    RECOMMENDED_SECTION,
    LogDataset,
    UserCovariates,
)
from .util import rng_for


# ---------------------------------------------------------------------------
# outcomes


@dataclass(frozen=True)
class OutcomeVector:
    """Per-user sums over the experiment window."""

    total_engagement_section: float = 0.0
    total_engagement_all: float = 0.0
    total_stories_section: int = 0
    total_stories_all: int = 0
    reading_time_section: float = 0.0
    reading_time_all: float = 0.0
    launched_app: bool = False

    OUTCOME_NAMES = (
        "total_engagement_section", "total_engagement_all",
        "total_stories_section", "total_stories_all",
        "reading_time_section", "reading_time_all",
    )

    def get(self, name: str) -> float:
        if name not in self.OUTCOME_NAMES:
            raise KeyError(f"unknown outcome {name!r}")
        return float(getattr(self, name))


def build_outcomes(data: LogDataset, arms: dict,
                   section: str = RECOMMENDED_SECTION,
                   launched=None) -> dict:
    """Per-user OutcomeVector for every user in the arm table.

    Engagement sums skip NotShown rows; story counts are completions;
    reading time adds the catalog interval midpoint of each completed
    story.  When no explicit launch set is given, any logged record
    counts as an app launch.
    """
    scored = data.scored
    completed = data.completed
    in_sec = data.section == section
    values = data.values
    midpoint = {sid: meta.reading_time_midpoint
                for sid, meta in data.stories.items()}

    sums = {uid: [0.0, 0.0, 0, 0, 0.0, 0.0] for uid in arms}
    for i in range(data.n_records):
        uid = int(data.user_id[i])
        row = sums.get(uid)
        if row is None or not scored[i]:
            continue
        v = float(values[i])
        row[1] += v
        if in_sec[i]:
            row[0] += v
        if completed[i]:
            mid = midpoint[int(data.story_id[i])]
            row[3] += 1
            row[5] += mid
            if in_sec[i]:
                row[2] += 1
                row[4] += mid

    if launched is None:
        launched = set(int(u) for u in np.unique(data.user_id))
    out = {}
    for uid, row in sums.items():
        out[uid] = OutcomeVector(
            total_engagement_section=row[0], total_engagement_all=row[1],
            total_stories_section=row[2], total_stories_all=row[3],
            reading_time_section=row[4], reading_time_all=row[5],
            launched_app=uid in launched)
    return out


@dataclass(frozen=True)
class EstimateReport:
    estimator: str
    outcome: str
    estimate: float
    std_error: float
    p_value: float
    pct_of_baseline: float
    n_treated: int
    n_control: int
    sample_filter: str = "launched_app"

    def ci(self, level: float = 0.95):
        z = norm.ppf(0.5 + level / 2.0)
        return (self.estimate - z * self.std_error,
                self.estimate + z * self.std_error)

    def line(self) -> str:
        return (f"{self.estimator}\t{self.outcome}\t{self.sample_filter}\t"
                f"{self.estimate:.6g}\t{self.std_error:.6g}\t"
                f"{self.p_value:.4g}\t{self.pct_of_baseline:.4g}")


def analysis_sample(outcomes: dict, arms: dict, outcome: str):
    """(user order, y, a) restricted to users who launched the app."""
    users = sorted(u for u in arms
                   if u in outcomes and outcomes[u].launched_app)
    y = np.array([outcomes[u].get(outcome) for u in users], dtype=float)
    a = np.array([arms[u] for u in users], dtype=float)
    return users, y, a


def _two_sided_normal_p(z: float) -> float:
    return float(2.0 * norm.sf(abs(z)))


# ---------------------------------------------------------------------------
# ATE estimators


def diff_in_means(outcome: str, outcomes: dict, arms: dict) -> EstimateReport:
    """Treated minus control mean with the unequal-variance standard error."""
    _, y, a = analysis_sample(outcomes, arms, outcome)
    yt, yc = y[a == 1], y[a == 0]
    if yt.size < 2 or yc.size < 2:
        raise DegenerateArm(
            f"need >=2 users per arm, got {yt.size}/{yc.size}")
    est = float(yt.mean() - yc.mean())
    se = float(np.sqrt(yt.var(ddof=1) / yt.size + yc.var(ddof=1) / yc.size))
    z = est / se if se > 0 else 0.0
    base = yc.mean()
    pct = est / base * 100.0 if base != 0 else float("nan")
    return EstimateReport("DiffInMeans", outcome, est, se,
                          _two_sided_normal_p(z), pct, yt.size, yc.size)


def covariate_matrix(users, profiles: dict, covariates: dict):
    """Design matrix (no intercept) for the standard adjustment set.

    Grade and channel enter as dummies with the first level dropped;
    past utilization, niche type, and past section usage come from the
    pre-period covariates.
    """
    grades = sorted({profiles[u].grade for u in users})
    channels = sorted({profiles[u].channel for u in users})
    cols, names = [], []
    for g in grades[1:]:
        cols.append([1.0 if profiles[u].grade == g else 0.0 for u in users])
        names.append(f"grade_{g}")
    for c in channels[1:]:
        cols.append([1.0 if profiles[u].channel == c else 0.0
                     for u in users])
        names.append(f"channel_{c}")
    blank = UserCovariates()
    for attr in ("past_total_engagement", "past_stories_completed",
                 "max_streak", "is_niche", "used_section_before"):
        cols.append([float(getattr(covariates.get(u, blank), attr))
                     for u in users])
        names.append(attr)
    X = np.array(cols, dtype=float).T if cols else np.empty((len(users), 0))
    # constant columns are collinear with the intercept; drop them
    keep = [j for j in range(X.shape[1]) if np.ptp(X[:, j]) > 0]
    return X[:, keep], [names[j] for j in keep]


def _ols_hc2(y, X):
    res = sm.OLS(y, X).fit(cov_type="HC2")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankDeficient("design matrix is rank deficient")
    return res


def regression_adjusted_ate(outcome: str, outcomes: dict, arms: dict,
                            covariates_by_user, profiles: dict = None,
                            X=None) -> EstimateReport:
    """OLS coefficient on the arm indicator with an HC2 robust error.

    Pass either a prebuilt design matrix X aligned to the launched
    sample, or per-user covariates plus profiles to build the standard
    adjustment set.
    """
    users, y, a = analysis_sample(outcomes, arms, outcome)
    if (a == 1).sum() < 2 or (a == 0).sum() < 2:
        raise DegenerateArm("need >=2 users per arm")
    if X is None:
        X, _ = covariate_matrix(users, profiles or {}, covariates_by_user)
    X = np.asarray(X, dtype=float)
    design = np.column_stack([np.ones(len(users)), a, X])
    res = _ols_hc2(y, design)
    est, se = float(res.params[1]), float(res.bse[1])
    z = est / se if se > 0 else 0.0
    base = y[a == 0].mean()
    pct = est / base * 100.0 if base != 0 else float("nan")
    return EstimateReport("RegressionAdjusted", outcome, est, se,
                          _two_sided_normal_p(z), pct,
                          int((a == 1).sum()), int((a == 0).sum()))


def aipw_ate(outcome: str, outcomes: dict, arms: dict, X,
             propensity: float = 0.5, n_folds: int = 5,
             ridge_alpha: float = 1.0, seed: int = 0,
             zero_nuisance: bool = False):
    """Doubly robust ATE under known randomization propensity.

    Nuisance outcome means are cross-fitted ridge regressions on X;
    zero_nuisance forces both to 0, collapsing the estimator to inverse
    propensity weighting.  Returns the report and the per-user influence
    scores, whose mean is the estimate and whose standard deviation
    gives the error.
    """
    if not 0.0 < propensity < 1.0:
        raise PropensityOutOfRange(f"propensity {propensity} not in (0,1)")
    from sklearn.linear_model import Ridge

    users, y, a = analysis_sample(outcomes, arms, outcome)
    n = len(users)
    if (a == 1).sum() < 2 or (a == 0).sum() < 2:
        raise DegenerateArm("need >=2 users per arm")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]

    m1 = np.zeros(n)
    m0 = np.zeros(n)
    idx = rng_for(seed, "aipw-folds").permutation(n)
    folds = [] if zero_nuisance \
        else np.array_split(idx, max(1, min(n_folds, n)))
    for hold in folds:
        train = np.setdiff1d(idx, hold)
        for arm, m in ((1, m1), (0, m0)):
            tr = train[a[train] == arm]
            if tr.size == 0:
                m[hold] = y[train].mean() if train.size else 0.0
            elif X.shape[1] == 0 or tr.size < 2:
                m[hold] = y[tr].mean()
            else:
                reg = Ridge(alpha=ridge_alpha).fit(X[tr], y[tr])
                m[hold] = reg.predict(X[hold])

    scores = (m1 - m0
              + a * (y - m1) / propensity
              - (1 - a) * (y - m0) / (1 - propensity))
    est = float(scores.mean())
    se = float(scores.std(ddof=1) / np.sqrt(n))
    z = est / se if se > 0 else 0.0
    base = y[a == 0].mean()
    pct = est / base * 100.0 if base != 0 else float("nan")
    report = EstimateReport("AIPW", outcome, est, se,
                            _two_sided_normal_p(z), pct,
                            int((a == 1).sum()), int((a == 0).sum()))
    return report, dict(zip(users, scores))


# ---------------------------------------------------------------------------
# rank-sum test


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    exact: bool
    fully_tied: bool = False


def _midranks(pooled: np.ndarray) -> np.ndarray:
    order = np.argsort(pooled, kind="mergesort")
    ranks = np.empty(pooled.size, dtype=float)
    i = 0
    sorted_v = pooled[order]
    while i < pooled.size:
        j = i
        while j + 1 < pooled.size and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def wilcoxon_one_sided(treated, control) -> WilcoxonResult:
    """Rank-sum test of the alternative "treated shifted above control".

    Uses exact enumeration of rank assignments when the pooled size is
    at most 12, otherwise a tie-corrected normal approximation with a
    continuity correction.  Fully tied samples return p = 0.5 by
    convention and are flagged.
    """
    t = np.asarray(treated, dtype=float)
    c = np.asarray(control, dtype=float)
    if t.size == 0 or c.size == 0:
        raise DegenerateArm("both samples must be non-empty")
    pooled = np.concatenate([t, c])
    ranks = _midranks(pooled)
    w = float(ranks[:t.size].sum())
    if np.unique(pooled).size == 1:
        return WilcoxonResult(w, 0.5, exact=False, fully_tied=True)

    n, n_t = pooled.size, t.size
    if n <= 12:
        ge = 0
        total = 0
        for combo in itertools.combinations(range(n), n_t):
            total += 1
            if ranks[list(combo)].sum() >= w - 1e-12:
                ge += 1
        return WilcoxonResult(w, ge / total, exact=True)

    mu = n_t * (n + 1) / 2.0
    _, counts = np.unique(pooled, return_counts=True)
    tie_term = float(((counts ** 3 - counts).sum()) / (n * (n - 1)))
    var = n_t * (n - n_t) / 12.0 * ((n + 1) - tie_term)
    z = (w - mu - 0.5) / np.sqrt(var)
    return WilcoxonResult(w, float(norm.sf(z)), exact=False)


# ---------------------------------------------------------------------------
# heterogeneity


SUBGROUP_SPLITS = ("is_niche", "is_heavy_engagement", "is_heavy_completion",
                   "used_section_before")


def subgroup_ates(outcome: str, outcomes: dict, arms: dict,
                  covariates: dict, splits=SUBGROUP_SPLITS) -> dict:
    """Diff-in-means per binary subgroup plus the between-group contrast.

    Each split yields reports for the flag-true group, the flag-false
    group, and their difference with the pooled standard error.  Groups
    too small to estimate are returned as None and listed in "empty".
    """
    table = {}
    blank = UserCovariates()
    for split in splits:
        flag = {u: bool(getattr(covariates.get(u, blank), split))
                for u in arms}
        rows = {}
        empty = []
        for label, keep in (("true", True), ("false", False)):
            sub_arms = {u: a for u, a in arms.items() if flag[u] == keep}
            try:
                rows[label] = diff_in_means(outcome, outcomes, sub_arms)
            except DegenerateArm:
                rows[label] = None
                empty.append(label)
        if rows["true"] is not None and rows["false"] is not None:
            d = rows["true"].estimate - rows["false"].estimate
            se = float(np.hypot(rows["true"].std_error,
                                rows["false"].std_error))
            z = d / se if se > 0 else 0.0
            rows["diff"] = EstimateReport(
                "DiffATE", outcome, d, se, _two_sided_normal_p(z),
                float("nan"),
                rows["true"].n_treated + rows["true"].n_control,
                rows["false"].n_treated + rows["false"].n_control,
                sample_filter=f"{split}: true - false")
        else:
            rows["diff"] = None
        rows["empty"] = empty
        table[split] = rows
    return table


def aipw_score_regression(scores: dict, covariates_rows, names):
    """OLS of AIPW scores on covariates; robust errors; intercept first.

    covariates_rows must align with sorted(scores) user order.  Returns
    a list of (name, coefficient, std_error, p_value).
    """
    users = sorted(scores)
    y = np.array([scores[u] for u in users], dtype=float)
    X = np.asarray(covariates_rows, dtype=float)
    if X.size == 0:
        X = np.empty((len(users), 0))
    design = np.column_stack([np.ones(len(users)), X])
    res = _ols_hc2(y, design)
    out = []
    for name, coef, se in zip(["intercept"] + list(names),
                              res.params, res.bse):
        z = coef / se if se > 0 else 0.0
        out.append((name, float(coef), float(se), _two_sided_normal_p(z)))
    return out


# ---------------------------------------------------------------------------
# diagnostics


def mean_engagement_by_rank(data: LogDataset, arms: dict,
                            section: str = RECOMMENDED_SECTION,
                            max_rank: int = 15) -> dict:
    """Mean engagement by within-day interaction order, per arm.

    Rank 1 is the first section interaction of a user-day in (day,
    session, record) order; NotShown rows are not interactions and are
    skipped.  Returns {arm: [(rank, mean, lo, hi, n), ...]}.
    """
    sec = data.in_section(section)
    buckets = {0: {}, 1: {}}
    last_key = None
    order_rank = 0
    for i in range(sec.n_records):
        if not sec.scored[i]:
            continue
        uid = int(sec.user_id[i])
        arm = arms.get(uid)
        if arm is None:
            continue
        key = (uid, int(sec.day[i]))
        if key != last_key:
            last_key = key
            order_rank = 0
        order_rank += 1
        if order_rank > max_rank:
            continue
        buckets[arm].setdefault(order_rank, []).append(float(sec.values[i]))
    out = {}
    for arm, by_rank in buckets.items():
        rows = []
        for rank in sorted(by_rank):
            v = np.array(by_rank[rank])
            m = float(v.mean())
            se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
            rows.append((rank, m, m - 1.96 * se, m + 1.96 * se, v.size))
        out[arm] = rows
    return out


def session_length_distribution(data: LogDataset, arms: dict,
                                section: str = RECOMMENDED_SECTION) -> dict:
    """Relative frequency of section interactions per session, by arm."""
    sec = data.in_section(section)
    counts = {0: {}, 1: {}}
    lengths = {}
    for i in range(sec.n_records):
        if not sec.scored[i]:
            continue
        uid = int(sec.user_id[i])
        if uid not in arms:
            continue
        key = (uid, int(sec.day[i]), int(sec.session_id[i]))
        lengths[key] = lengths.get(key, 0) + 1
    for (uid, _, _), ln in lengths.items():
        arm = arms[uid]
        counts[arm][ln] = counts[arm].get(ln, 0) + 1
    out = {}
    for arm, hist in counts.items():
        total = sum(hist.values())
        out[arm] = {ln: cnt / total for ln, cnt in sorted(hist.items())} \
            if total else {}
    return out


def bucket_engagement_analysis(data: LogDataset, arms: dict,
                               n_buckets: int, profiles: dict,
                               covariates: dict,
                               section: str = RECOMMENDED_SECTION):
    """Adjusted engagement per story-popularity bucket and arm.

    Stories are sorted by treatment-arm impression count (ties broken
    by ascending story id) and split so each bucket carries roughly
    equal treatment impressions.  Within a bucket, engagement per
    interaction is regressed on the arm indicator plus the standard
    covariates; the adjusted treatment mean is the raw control mean
    plus the arm coefficient.
    """
    if n_buckets < 1:
        raise ValueError("n_buckets must be >= 1")
    sec = data.in_section(section)
    keep = np.array([arms.get(int(u)) is not None for u in sec.user_id])
    scored = sec.scored & keep
    arm_col = np.array([arms.get(int(u), -1) for u in sec.user_id])

    treated_imp = {}
    for i in range(sec.n_records):
        if scored[i] and arm_col[i] == 1:
            sid = int(sec.story_id[i])
            treated_imp[sid] = treated_imp.get(sid, 0) + 1
    stories = sorted(treated_imp, key=lambda s: (-treated_imp[s], s))
    if not stories:
        raise EmptyGroup("no treatment impressions to bucket")
    total = sum(treated_imp.values())
    bucket_of = {}
    cum = 0
    b = 0
    for sid in stories:
        cum += treated_imp[sid]
        bucket_of[sid] = b
        if cum >= (b + 1) * total / n_buckets and b < n_buckets - 1:
            b += 1

    rows = []
    for bucket in range(n_buckets):
        mask = scored & np.array([bucket_of.get(int(s)) == bucket
                                  for s in sec.story_id])
        if not mask.any():
            rows.append((bucket, 0, float("nan"), float("nan"),
                         float("nan"), float("nan")))
            continue
        y = sec.values[mask].astype(float)
        a = arm_col[mask].astype(float)
        users = [int(u) for u in sec.user_id[mask]]
        X, _ = covariate_matrix(users, profiles, covariates)
        ctrl_mean = float(y[a == 0].mean()) if (a == 0).any() else float("nan")
        if (a == 1).any() and (a == 0).any():
            # drop constant covariate columns inside small buckets
            keep_cols = [j for j in range(X.shape[1]) if np.ptp(X[:, j]) > 0]
            design = np.column_stack([np.ones(y.size), a, X[:, keep_cols]])
            res = sm.OLS(y, design).fit(cov_type="HC2")
            tau, se = float(res.params[1]), float(res.bse[1])
        else:
            tau, se = float("nan"), float("nan")
        rows.append((bucket, int(mask.sum()), ctrl_mean,
                     ctrl_mean + tau, tau, se))
    return rows


def story_popularity_exposure(data: LogDataset, arms: dict,
                              covariates: dict,
                              section: str = RECOMMENDED_SECTION) -> dict:
    """Popularity rank of stories shown to niche vs non-niche users.

    Stories are ranked by pooled impression count (rank 1 = most
    impressions).  Per arm, the unit is one section interaction; the
    mean story rank and percentile are compared between niche and
    non-niche users with an unequal-variance z test.  A single-story
    catalog is flagged degenerate.
    """
    sec = data.in_section(section)
    imp = {}
    for i in range(sec.n_records):
        if sec.scored[i]:
            sid = int(sec.story_id[i])
            imp[sid] = imp.get(sid, 0) + 1
    order = sorted(imp, key=lambda s: (-imp[s], s))
    rank_of = {sid: r + 1 for r, sid in enumerate(order)}
    n_stories = len(order)
    degenerate = n_stories <= 1
    blank = UserCovariates()

    out = {"degenerate": degenerate}
    for arm in (0, 1):
        vals = {True: [], False: []}
        for i in range(sec.n_records):
            uid = int(sec.user_id[i])
            if not sec.scored[i] or arms.get(uid) != arm:
                continue
            niche = bool(covariates.get(uid, blank).is_niche)
            vals[niche].append(rank_of[int(sec.story_id[i])])
        row = {}
        for label, key in (("niche", True), ("non_niche", False)):
            v = np.array(vals[key], dtype=float)
            row[f"mean_rank_{label}"] = float(v.mean()) if v.size else \
                float("nan")
            row[f"mean_pctile_{label}"] = \
                float((v / n_stories).mean() * 100) if v.size and \
                n_stories else float("nan")
        vt, vc = np.array(vals[True], float), np.array(vals[False], float)
        if degenerate or vt.size < 2 or vc.size < 2:
            row["diff"], row["p_value"] = float("nan"), float("nan")
        else:
            d = vt.mean() - vc.mean()
            se = np.sqrt(vt.var(ddof=1) / vt.size + vc.var(ddof=1) / vc.size)
            z = d / se if se > 0 else 0.0
            row["diff"], row["p_value"] = float(d), _two_sided_normal_p(z)
        out[arm] = row
    return out


def balance_table(X, names, users, arms: dict):
    """Arm means, sds, and Welch p-value per covariate column."""
    a = np.array([arms[u] for u in users], dtype=float)
    if (a == 1).sum() < 2 or (a == 0).sum() < 2:
        raise DegenerateArm("need >=2 users per arm")
    X = np.asarray(X, dtype=float)
    rows = []
    for j, name in enumerate(names):
        xt, xc = X[a == 1, j], X[a == 0, j]
        d = xt.mean() - xc.mean()
        se = np.sqrt(xt.var(ddof=1) / xt.size + xc.var(ddof=1) / xc.size)
        if d == 0:
            p = 1.0
        elif se == 0:
            p = 0.0
        else:
            p = _two_sided_normal_p(d / se)
        rows.append((name, float(xt.mean()), float(xt.std(ddof=1)),
                     float(xc.mean()), float(xc.std(ddof=1)), float(p)))
    return rows


def mde(outcome_sd: float, n_t: int, n_c: int, alpha: float = 0.05,
        power: float = 0.8) -> float:
    """Minimum detectable effect of the standard two-sample formula."""
    if outcome_sd <= 0 or n_t <= 0 or n_c <= 0:
        raise ValueError("inputs must be positive")
    mult = norm.ppf(1 - alpha / 2.0) + norm.ppf(power)
    return float(mult * outcome_sd * np.sqrt(1.0 / n_t + 1.0 / n_c))


def calibration_regression(model, data: LogDataset, groups: dict,
                           section: str = None):
    """No-intercept regression of observed engagement on predictions.

    groups maps a label to a set of user ids; each row reports (label,
    slope, std_error, r_squared, n).  R² is uncentered, matching the
    through-origin fit.  Records the model cannot score are skipped.
    """
    sub = data.in_section(section) if section else data
    mask = sub.scored
    X = np.stack([sub.user_id[mask], sub.story_id[mask]], axis=1)
    y = sub.values[mask].astype(float)
    uid = sub.user_id[mask]
    pred, cold = model.predict(X, return_cold_start=True)
    ok = ~cold
    rows = []
    for label, members in groups.items():
        sel = ok & np.isin(uid, list(members))
        p, o = pred[sel], y[sel]
        n = int(sel.sum())
        denom = float((p ** 2).sum())
        if n == 0 or denom == 0:
            rows.append((label, float("nan"), float("nan"),
                         float("nan"), n))
            continue
        slope = float((p * o).sum() / denom)
        resid = o - slope * p
        se = float(np.sqrt((resid ** 2).sum() / max(n - 1, 1) / denom))
        tot = float((o ** 2).sum())
        r2 = 1.0 - float((resid ** 2).sum()) / tot if tot > 0 else float("nan")
        rows.append((label, slope, se, r2, n))
    return rows
