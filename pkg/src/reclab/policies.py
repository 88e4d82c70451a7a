"""Recommendation policies and the weekly slate state machine.

Three policy kinds: an editorial script (per grade and week), a popularity
ranking driven by a two-way fixed-effects model, and a personalized ranking
driven by matrix factorization. Slates refresh weekly; during the week,
started stories are removed and a stale top-3 is evicted after two active
days without a completion among them.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ZeroMass

SLATE_SIZE = 15


@dataclass(frozen=True)
class Slate:
    stories: tuple
    valid_day: int = 0
    short: bool = False  # candidate pool exhausted below slate_size

    def __post_init__(self):
        if len(set(self.stories)) != len(self.stories):
            raise ConfigError("slate contains duplicate stories")

    def __len__(self):
        return len(self.stories)

    def __iter__(self):
        return iter(self.stories)


@dataclass(frozen=True)
class PolicySpec:
    """A recommendation policy.

    kind "editorial" uses ``script[(grade, week)] -> ranked story list``;
    "popularity" and "personalized" rank candidates by the model's
    predicted engagement, descending, ties broken by ascending story id.
    """
    kind: str  # "editorial" | "popularity" | "personalized"
    model: object = None
    script: dict = None
    slate_size: int = SLATE_SIZE

    def __post_init__(self):
        if self.kind == "editorial":
            if not self.script:
                raise ConfigError("editorial policy needs a script")
        elif self.kind in ("popularity", "personalized"):
            if self.model is None:
                raise ConfigError(f"{self.kind} policy needs a model")
        else:
            raise ConfigError(f"unknown policy kind {self.kind!r}")


def rank_stories(policy: PolicySpec, user_id: int, candidates,
                 grade: int = 1, week: int = 0) -> list[int]:
    """Full ranking of the candidate stories under the policy."""
    candidates = sorted(set(int(c) for c in candidates))
    if not candidates:
        raise ConfigError("empty candidate pool")
    if policy.kind == "editorial":
        key = (grade, week)
        if key not in policy.script:
            raise ConfigError(f"editorial script missing entry for {key}")
        scripted = [s for s in policy.script[key] if s in set(candidates)]
        rest = [s for s in candidates if s not in set(scripted)]
        return scripted + rest
    X = np.array([[user_id, s] for s in candidates], dtype=np.int64)
    preds = policy.model.predict(X)
    order = np.lexsort((np.array(candidates), -preds))
    return [candidates[i] for i in order]


def top_k(ranking, k: int) -> Slate:
    if k < 1:
        raise ConfigError("k must be >= 1")
    entries = tuple(ranking[:k])
    return Slate(entries, short=len(entries) < k)


@dataclass(frozen=True)
class SlateState:
    """Per (user, week) slate bookkeeping for the daily update rule."""
    base_ranking: tuple
    slate: tuple
    started: frozenset = frozenset()
    evicted: frozenset = frozenset()
    active_days_counter: int = 0
    top3_ref: tuple = ()
    short: bool = False


@dataclass(frozen=True)
class DayActivity:
    active: bool = False
    started: frozenset = frozenset()
    completed: frozenset = frozenset()


def weekly_refresh(policy: PolicySpec, user_id: int, candidates,
                   grade: int = 1, week: int = 0) -> SlateState:
    """New-week state: fresh base ranking, cleared memory, top-15 slate."""
    ranking = rank_stories(policy, user_id, candidates, grade, week)
    slate = top_k(ranking, policy.slate_size)
    return SlateState(base_ranking=tuple(ranking), slate=slate.stories,
                      started=frozenset(), active_days_counter=0,
                      top3_ref=slate.stories[:3], short=slate.short)


def _backfill(base_ranking, current_slate, excluded: set, slate_size: int):
    """Surviving entries keep their order; fresh base-ranking entries fill
    the bottom. Removed stories are never recycled, so the slate may run
    short when the pool is exhausted."""
    survivors = [s for s in current_slate if s not in excluded]
    pool = [s for s in base_ranking
            if s not in excluded and s not in set(survivors)]
    new_slate = (survivors + pool)[:slate_size]
    return tuple(new_slate), len(new_slate) < slate_size


def daily_update(state: SlateState, activity: DayActivity,
                 slate_size: int = SLATE_SIZE) -> SlateState:
    """One within-week day of the re-ranking rule.

    Inactive day: no change. Otherwise started (and completed) stories are
    removed and backfilled; the active-day counter tracks active days since
    the current top-3 was set, resetting on a top-3 completion or whenever
    the top-3 changes, and evicting the current top-3 when it reaches two.
    """
    if not activity.active:
        return state
    touched = frozenset(activity.started) | frozenset(activity.completed)
    started = state.started | touched
    excluded = set(started) | set(state.evicted)
    slate, short = _backfill(state.base_ranking, state.slate, excluded,
                             slate_size)

    if frozenset(activity.completed) & set(state.top3_ref):
        counter = 0
    elif tuple(slate[:3]) != tuple(state.top3_ref):
        counter = 0
    else:
        counter = state.active_days_counter + 1

    evicted = state.evicted
    if counter >= 2:
        evicted = evicted | frozenset(slate[:3])
        slate, short2 = _backfill(state.base_ranking, slate,
                                  set(started) | set(evicted), slate_size)
        short = short or short2
        counter = 0
    return SlateState(base_ranking=state.base_ranking, slate=slate,
                      started=started, evicted=evicted,
                      active_days_counter=counter, top3_ref=slate[:3],
                      short=state.short or short)


def exposure_distribution(slate, position_effects) -> dict[int, float]:
    """Exposure probability per story: position effect of its rank,
    normalized over the slate. Stories off the slate get zero."""
    position_effects = np.asarray(position_effects, dtype=float)
    if (position_effects < 0).any():
        raise ConfigError("position effects must be non-negative")
    weights = position_effects[:len(slate)]
    total = weights.sum()
    if total <= 0:
        raise ZeroMass("all position effects are zero over the slate")
    return {int(s): float(w / total) for s, w in zip(slate, weights)}


# ---------------------------------------------------------------------------
# File interfaces


def read_editorial_script(path) -> dict:
    """Script table `grade, week, rank, story_id` -> {(grade, week): [ids]}."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != ["grade", "week", "rank", "story_id"]:
            raise ConfigError(f"bad editorial script header: {header}")
        for row in reader:
            rows.append((int(row[0]), int(row[1]), int(row[2]), int(row[3])))
    script: dict = {}
    for grade, week, rank, story in sorted(rows):
        script.setdefault((grade, week), []).append(story)
    return script


def write_editorial_script(script: dict, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["grade", "week", "rank", "story_id"])
        for (grade, week) in sorted(script):
            for rank, story in enumerate(script[(grade, week)], start=1):
                writer.writerow([grade, week, rank, story])


def read_position_effects(path, slate_size: int = SLATE_SIZE) -> np.ndarray:
    values = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                values.append(float(line))
    if len(values) != slate_size:
        raise ConfigError(f"expected {slate_size} position effects, "
                          f"got {len(values)}")
    vec = np.array(values)
    if (vec < 0).any():
        raise ConfigError("position effects must be non-negative")
    return vec


def write_position_effects(vec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in vec:
            fh.write(f"{float(v):.12g}\n")
