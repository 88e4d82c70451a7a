"""Interaction-log data model: records, ingestion, trimming, covariates.

The canonical unit is one user-story exposure with its engagement outcome.
Datasets are stored columnar (numpy arrays) and are immutable after
construction; all analysis code treats them as read-only.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterator

import numpy as np

from .errors import InvariantError, ParseError
from .util import top_fraction_ids

RECOMMENDED_SECTION = "recommended_story"
MAX_SLATE_RANK = 15

CHANNELS = ("B2B", "B2C", "Paid")


class OutcomeKind(str, Enum):
    COMPLETED = "COMPLETED"
    STARTED = "STARTED"
    VIEWED = "VIEWED"
    SKIPPED = "SKIPPED"
    NOT_SHOWN = "NOT_SHOWN"


# Fixed five-point engagement support. NOT_SHOWN is recorded (exposure
# without interaction) but carries no value and is excluded from every sum.
ENGAGEMENT_VALUE = {
    OutcomeKind.COMPLETED: 1.0,
    OutcomeKind.STARTED: 0.5,
    OutcomeKind.VIEWED: 0.3,
    OutcomeKind.SKIPPED: 0.0,
    OutcomeKind.NOT_SHOWN: float("nan"),
}

_KIND_ORDER = tuple(OutcomeKind)
_KIND_CODE = {k: i for i, k in enumerate(_KIND_ORDER)}
_KIND_VALUES = np.array([ENGAGEMENT_VALUE[k] for k in _KIND_ORDER])


def score_outcome(kind: OutcomeKind) -> float:
    """Engagement value of an outcome kind (NaN for NOT_SHOWN)."""
    return ENGAGEMENT_VALUE[OutcomeKind(kind)]


@dataclass(frozen=True)
class UserProfile:
    user_id: int
    grade: int = 1
    channel: str = "B2C"
    registration_day: int = 0

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise InvariantError(f"unknown channel {self.channel!r}")


@dataclass(frozen=True)
class StoryMeta:
    story_id: int
    collection_tag: str = ""
    minutes_lo: float = 2.0
    minutes_hi: float = 4.0

    def __post_init__(self):
        if not (0 < self.minutes_lo <= self.minutes_hi):
            raise InvariantError(
                f"story {self.story_id}: bad reading-time interval "
                f"({self.minutes_lo}, {self.minutes_hi})"
            )

    @property
    def reading_time_midpoint(self) -> float:
        return 0.5 * (self.minutes_lo + self.minutes_hi)


@dataclass(frozen=True)
class InteractionRecord:
    user_id: int
    story_id: int
    day: int
    session_id: int
    section: str
    slate_rank: int | None
    outcome: OutcomeKind

    @property
    def value(self) -> float:
        return ENGAGEMENT_VALUE[self.outcome]


@dataclass(frozen=True)
class UserCovariates:
    past_total_engagement: float = 0.0
    past_stories_completed: int = 0
    max_streak: int = 0
    is_niche: bool = False
    is_heavy_engagement: bool = False
    is_heavy_completion: bool = False
    used_section_before: bool = False
    empty_history: bool = False


@dataclass(frozen=True)
class LogDataset:
    """Columnar, sorted, validated collection of interaction records.

    Records are sorted by (user_id, day, session_id) with within-session
    order preserved. ``slate_rank`` is -1 where absent. ``outcome`` holds
    integer codes into the fixed kind order.
    """

    user_id: np.ndarray
    story_id: np.ndarray
    day: np.ndarray
    session_id: np.ndarray
    section: np.ndarray
    slate_rank: np.ndarray
    outcome: np.ndarray
    users: dict = field(default_factory=dict)
    stories: dict = field(default_factory=dict)

    @staticmethod
    def from_columns(user_id, story_id, day, session_id, section, slate_rank,
                     outcome, users=None, stories=None,
                     validate: bool = True) -> "LogDataset":
        user_id = np.asarray(user_id, dtype=np.int64)
        story_id = np.asarray(story_id, dtype=np.int64)
        day = np.asarray(day, dtype=np.int64)
        session_id = np.asarray(session_id, dtype=np.int64)
        section = np.asarray(section, dtype="U32")
        slate_rank = np.asarray(slate_rank, dtype=np.int64)
        outcome = np.asarray(outcome, dtype=np.int8)
        order = np.lexsort((session_id, day, user_id))
        ds = LogDataset(
            user_id[order], story_id[order], day[order], session_id[order],
            section[order], slate_rank[order], outcome[order],
            dict(users or {}), dict(stories or {}),
        )
        for uid in np.unique(ds.user_id):
            ds.users.setdefault(int(uid), UserProfile(int(uid)))
        for sid in np.unique(ds.story_id):
            ds.stories.setdefault(int(sid), StoryMeta(int(sid)))
        if validate:
            ds.validate()
        return ds

    @staticmethod
    def from_records(records, users=None, stories=None) -> "LogDataset":
        records = list(records)
        return LogDataset.from_columns(
            [r.user_id for r in records],
            [r.story_id for r in records],
            [r.day for r in records],
            [r.session_id for r in records],
            [r.section for r in records],
            [-1 if r.slate_rank is None else r.slate_rank for r in records],
            [_KIND_CODE[OutcomeKind(r.outcome)] for r in records],
            users, stories,
        )

    @staticmethod
    def empty(users=None, stories=None) -> "LogDataset":
        return LogDataset.from_columns([], [], [], [], [], [], [],
                                       users, stories)

    def validate(self) -> None:
        rank_present = self.slate_rank >= 0
        bad = rank_present & ((self.slate_rank < 1) | (self.slate_rank > MAX_SLATE_RANK))
        if bad.any():
            raise InvariantError("slate_rank outside 1..=15")
        ranked = self.section == RECOMMENDED_SECTION
        if (rank_present != ranked).any():
            raise InvariantError(
                "slate_rank must be present exactly for ranked-slate sections")
        if self.n_records:
            key = np.stack([self.user_id, self.story_id, self.day,
                            self.session_id], axis=1)
            uniq = np.unique(key, axis=0)
            if uniq.shape[0] != key.shape[0]:
                raise InvariantError("duplicate (user, story, day, session) key")
        missing_u = set(np.unique(self.user_id).tolist()) - set(self.users)
        missing_s = set(np.unique(self.story_id).tolist()) - set(self.stories)
        if missing_u or missing_s:
            raise InvariantError(
                f"unregistered entities: users={sorted(missing_u)[:5]} "
                f"stories={sorted(missing_s)[:5]}")

    @property
    def n_records(self) -> int:
        return int(self.user_id.size)

    @property
    def period(self) -> tuple[int, int] | None:
        """(first_day, last_day), or None for an empty dataset."""
        if self.n_records == 0:
            return None
        return int(self.day.min()), int(self.day.max())

    @property
    def values(self) -> np.ndarray:
        """Engagement values per record; NaN for NOT_SHOWN rows."""
        return _KIND_VALUES[self.outcome]

    @property
    def scored(self) -> np.ndarray:
        """Mask of records with a non-NA engagement value."""
        return self.outcome != _KIND_CODE[OutcomeKind.NOT_SHOWN]

    @property
    def completed(self) -> np.ndarray:
        return self.outcome == _KIND_CODE[OutcomeKind.COMPLETED]

    def filter(self, mask: np.ndarray) -> "LogDataset":
        return replace(
            self, user_id=self.user_id[mask], story_id=self.story_id[mask],
            day=self.day[mask], session_id=self.session_id[mask],
            section=self.section[mask], slate_rank=self.slate_rank[mask],
            outcome=self.outcome[mask])

    def in_section(self, section: str = RECOMMENDED_SECTION) -> "LogDataset":
        return self.filter(self.section == section)

    def before_day(self, cutoff_day: int) -> "LogDataset":
        return self.filter(self.day < cutoff_day)

    def records(self) -> Iterator[InteractionRecord]:
        for i in range(self.n_records):
            rank = int(self.slate_rank[i])
            yield InteractionRecord(
                int(self.user_id[i]), int(self.story_id[i]), int(self.day[i]),
                int(self.session_id[i]), str(self.section[i]),
                None if rank < 0 else rank, _KIND_ORDER[int(self.outcome[i])])

    def __eq__(self, other) -> bool:
        if not isinstance(other, LogDataset):
            return NotImplemented
        cols = ("user_id", "story_id", "day", "session_id", "section",
                "slate_rank", "outcome")
        return (all(np.array_equal(getattr(self, c), getattr(other, c))
                    for c in cols)
                and self.users == other.users and self.stories == other.stories)


# ---------------------------------------------------------------------------
# File format: line-delimited UTF-8 with header, plus sidecars for user
# profiles and story metadata. Field order is fixed.

LOG_FIELDS = ("user_id", "story_id", "day", "session_id", "section",
              "slate_rank", "outcome_kind")
USER_FIELDS = ("user_id", "grade", "channel", "registration_day")
STORY_FIELDS = ("story_id", "collection_tag", "minutes_lo", "minutes_hi")


def _read_header(reader, expected, path):
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError(1, f"{path}: missing header row")
    if tuple(h.strip() for h in header) != expected:
        raise ParseError(1, f"{path}: bad header {header!r}, expected {expected}")


def read_user_profiles(path) -> dict[int, UserProfile]:
    users = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        _read_header(reader, USER_FIELDS, path)
        for lineno, row in enumerate(reader, start=2):
            try:
                uid = int(row[0])
                users[uid] = UserProfile(uid, int(row[1]), row[2].strip(),
                                         int(row[3]))
            except (ValueError, IndexError, InvariantError) as exc:
                raise ParseError(lineno, str(exc)) from exc
    return users


def read_story_meta(path) -> dict[int, StoryMeta]:
    stories = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        _read_header(reader, STORY_FIELDS, path)
        for lineno, row in enumerate(reader, start=2):
            try:
                sid = int(row[0])
                stories[sid] = StoryMeta(sid, row[1].strip(), float(row[2]),
                                         float(row[3]))
            except (ValueError, IndexError, InvariantError) as exc:
                raise ParseError(lineno, str(exc)) from exc
    return stories


def ingest_log(path, users_path=None, stories_path=None) -> LogDataset:
    """Read a log file (plus optional sidecars) into a validated dataset.

    Unknown users and stories are registered with default profiles on first
    sight. Raises ParseError with the offending line number on malformed
    rows and InvariantError on key or rank violations.
    """
    users = read_user_profiles(users_path) if users_path else {}
    stories = read_story_meta(stories_path) if stories_path else {}
    cols = {f: [] for f in LOG_FIELDS}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        _read_header(reader, LOG_FIELDS, path)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(LOG_FIELDS):
                raise ParseError(lineno, f"expected {len(LOG_FIELDS)} fields, "
                                         f"got {len(row)}")
            try:
                cols["user_id"].append(int(row[0]))
                cols["story_id"].append(int(row[1]))
                cols["day"].append(int(row[2]))
                cols["session_id"].append(int(row[3]))
                cols["section"].append(row[4].strip())
                rank = row[5].strip()
                cols["slate_rank"].append(int(rank) if rank else -1)
                kind = OutcomeKind(row[6].strip())
            except ValueError as exc:
                raise ParseError(lineno, str(exc)) from exc
            cols["outcome_kind"].append(_KIND_CODE[kind])
    return LogDataset.from_columns(
        cols["user_id"], cols["story_id"], cols["day"], cols["session_id"],
        cols["section"], cols["slate_rank"], cols["outcome_kind"],
        users, stories)


def emit_log(data: LogDataset, path, users_path=None, stories_path=None) -> None:
    """Write a dataset back to the log file format (inverse of ingest)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_FIELDS)
        for i in range(data.n_records):
            rank = int(data.slate_rank[i])
            writer.writerow([
                int(data.user_id[i]), int(data.story_id[i]),
                int(data.day[i]), int(data.session_id[i]),
                str(data.section[i]), "" if rank < 0 else rank,
                _KIND_ORDER[int(data.outcome[i])].value])
    if users_path:
        with open(users_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(USER_FIELDS)
            for uid in sorted(data.users):
                u = data.users[uid]
                writer.writerow([u.user_id, u.grade, u.channel,
                                 u.registration_day])
    if stories_path:
        with open(stories_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(STORY_FIELDS)
            for sid in sorted(data.stories):
                s = data.stories[sid]
                writer.writerow([s.story_id, s.collection_tag, s.minutes_lo,
                                 s.minutes_hi])


# ---------------------------------------------------------------------------
# Trimming rules


def _session_completions(data: LogDataset):
    """Per (user, day, session) completed-story counts."""
    mask = data.completed
    if not mask.any():
        return np.empty((0, 3), dtype=np.int64), np.empty(0, dtype=np.int64)
    key = np.stack([data.user_id[mask], data.day[mask],
                    data.session_id[mask]], axis=1)
    uniq, counts = np.unique(key, axis=0, return_counts=True)
    return uniq, counts


def trim_outliers(data: LogDataset, max_completions_per_session: int = 10):
    """Drop users with any session of more than the cap of completions.

    The boundary is strict: a session with exactly the cap is retained.
    Returns (trimmed dataset, sorted list of dropped user ids).
    """
    keys, counts = _session_completions(data)
    dropped = np.unique(keys[counts > max_completions_per_session, 0])
    keep = ~np.isin(data.user_id, dropped)
    trimmed = data.filter(keep)
    for uid in dropped:
        trimmed.users.pop(int(uid), None)
    return trimmed, [int(u) for u in dropped]


def trim_top_daily_percentile(data: LogDataset, pct: float = 0.05):
    """Drop users whose max daily completion count is in the top ``pct``.

    Uses the deterministic top-fraction rule (rank <= ceil(pct*N) sorted
    descending, ties broken by ascending user id), so exactly ceil(pct*N)
    users are dropped whenever pct > 0 and any user completed a story.
    """
    if not (0 <= pct < 1):
        raise InvariantError("pct must be in [0, 1)")
    if pct == 0 or data.n_records == 0:
        return data, []
    mask = data.completed
    if not mask.any():
        return data, []
    key = np.stack([data.user_id[mask], data.day[mask]], axis=1)
    uniq, counts = np.unique(key, axis=0, return_counts=True)
    uids = np.unique(uniq[:, 0])
    max_daily = np.array([counts[uniq[:, 0] == u].max() for u in uids])
    dropped = top_fraction_ids(uids, max_daily, pct)
    keep = ~np.isin(data.user_id, dropped)
    trimmed = data.filter(keep)
    for uid in dropped:
        trimmed.users.pop(int(uid), None)
    return trimmed, [int(u) for u in dropped]


# ---------------------------------------------------------------------------
# Pre-period user covariates


def compute_covariates(data: LogDataset, cutoff_day: int,
                       niche_story_quantile: float = 0.25,
                       niche_user_share: float = 0.5,
                       heavy_quantile: float = 0.5,
                       section: str = RECOMMENDED_SECTION,
                       recent_window_days: int = 14) -> dict[int, UserCovariates]:
    """Per-user covariates computed from records strictly before the cutoff.

    A story is popular if it is in the top ``niche_story_quantile`` of
    stories by pre-cutoff completions; a user is niche if less than
    ``niche_user_share`` of their pre-cutoff interactions are with popular
    stories. Heavy flags mark the top ``heavy_quantile`` of pre-cutoff
    totals. ``used_section_before`` looks only at the trailing
    ``recent_window_days`` before the cutoff.
    """
    pre = data.before_day(cutoff_day)
    scored = pre.scored
    values = pre.values

    completions_by_story = {}
    comp = pre.completed
    for sid, cnt in zip(*np.unique(pre.story_id[comp], return_counts=True)):
        completions_by_story[int(sid)] = int(cnt)
    story_ids = np.array(sorted(data.stories), dtype=np.int64)
    story_comps = np.array([completions_by_story.get(int(s), 0)
                            for s in story_ids])
    popular = set(int(s) for s in
                  top_fraction_ids(story_ids, story_comps, niche_story_quantile))

    out: dict[int, UserCovariates] = {}
    totals_eng, totals_comp = {}, {}
    recent_lo = cutoff_day - recent_window_days
    for uid in sorted(data.users):
        mine = pre.user_id == uid
        mine_scored = mine & scored
        if not mine_scored.any():
            out[uid] = UserCovariates(empty_history=True)
            totals_eng[uid] = 0.0
            totals_comp[uid] = 0
            continue
        eng = float(np.nansum(values[mine_scored]))
        n_comp = int((mine & comp).sum())
        comp_days = np.unique(pre.day[mine & comp])
        streak = _max_streak(comp_days)
        inter_stories = pre.story_id[mine_scored]
        pop_share = float(np.mean([int(s) in popular for s in inter_stories]))
        recent = (mine_scored & (pre.section == section)
                  & (pre.day >= recent_lo))
        out[uid] = UserCovariates(
            past_total_engagement=eng,
            past_stories_completed=n_comp,
            max_streak=streak,
            is_niche=pop_share < niche_user_share,
            used_section_before=bool(recent.any()),
        )
        totals_eng[uid] = eng
        totals_comp[uid] = n_comp

    uids = np.array(sorted(data.users), dtype=np.int64)
    heavy_eng = set(int(u) for u in top_fraction_ids(
        uids, np.array([totals_eng[int(u)] for u in uids]), heavy_quantile))
    heavy_comp = set(int(u) for u in top_fraction_ids(
        uids, np.array([float(totals_comp[int(u)]) for u in uids]),
        heavy_quantile))
    for uid in out:
        if out[uid].empty_history:
            continue
        out[uid] = replace(out[uid],
                           is_heavy_engagement=uid in heavy_eng,
                           is_heavy_completion=uid in heavy_comp)
    return out


def _max_streak(days: np.ndarray) -> int:
    """Longest run of consecutive day indices."""
    if days.size == 0:
        return 0
    days = np.sort(days)
    breaks = np.flatnonzero(np.diff(days) != 1)
    lengths = np.diff(np.concatenate([[-1], breaks, [days.size - 1]]))
    return int(lengths.max())
