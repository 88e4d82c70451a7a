"""Engagement-prediction models: mean, two-way fixed effects, matrix
factorization.

All three share one estimator API (sklearn-style ``fit(X, y)`` /
``predict(X)`` with ``X`` an (n, 2) integer array of (user_id, story_id)
pairs) and one training loop: minibatch SGD with Adam on squared error
through a sigmoid link, plus an L2 penalty on all parameters.
"""
from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator

from .errors import (CorruptFile, EmptyTrainSplit, NoScorableRecords,
                     NonFiniteLoss, VersionMismatch)
from .interactions import LogDataset
from .util import rng_for


def sigmoid(x):
    return expit(x)


@dataclass
class SplitSpec:
    """Train/validation/test split of interaction records."""
    train_frac: float = 0.7
    validation_frac: float = 0.15
    test_frac: float = 0.15
    seed: int = 0
    mode: str = "random"  # "random" | "temporal_then_random"
    temporal_cut_day: int | None = None

    def __post_init__(self):
        total = self.train_frac + self.validation_frac + self.test_frac
        if not np.isclose(total, 1.0):
            raise ValueError(f"split fractions sum to {total}, expected 1")

    def assign(self, n: int, days: np.ndarray | None = None) -> np.ndarray:
        """Per-record split labels: 0 train, 1 validation, 2 test."""
        rng = rng_for(self.seed, "split")
        labels = np.zeros(n, dtype=np.int8)
        if self.mode == "temporal_then_random":
            if self.temporal_cut_day is None or days is None:
                raise ValueError("temporal mode needs temporal_cut_day and days")
            test = days >= self.temporal_cut_day
            labels[test] = 2
            rest = np.flatnonzero(~test)
            rng.shuffle(rest)
            frac = self.train_frac / (self.train_frac + self.validation_frac)
            n_train = int(round(frac * rest.size))
            labels[rest[n_train:]] = 1
        else:
            idx = rng.permutation(n)
            n_train = int(round(self.train_frac * n))
            n_val = int(round(self.validation_frac * n))
            labels[idx[n_train:n_train + n_val]] = 1
            labels[idx[n_train + n_val:]] = 2
        return labels


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 50
    batch_size: int = 256
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    l2_grid: tuple = (1e-5, 1e-4, 1e-3)
    k_grid: tuple = (4, 8, 16)
    seed: int = 0
    early_stop_patience: int = 5
    include_skipped: bool = True  # whether 0.0-valued rows enter the loss

    def __post_init__(self):
        if not self.l2_grid or not self.k_grid:
            raise ValueError("hyperparameter grids must be non-empty")


def dataset_xy(data: LogDataset, include_skipped: bool = True):
    """(X, y, day) arrays of scorable records for model fitting."""
    mask = data.scored
    if not include_skipped:
        mask = mask & (data.values != 0.0)
    X = np.stack([data.user_id[mask], data.story_id[mask]], axis=1)
    return X, data.values[mask], data.day[mask]


class _SGDModel(BaseEstimator):
    """Shared SGD machinery; subclasses fix which parameter blocks exist."""

    _has_effects = True

    def _k(self) -> int:
        return 0

    def _init_params(self, user_ids, story_ids, rng):
        self.user_index_ = {int(u): i for i, u in enumerate(user_ids)}
        self.story_index_ = {int(s): i for i, s in enumerate(story_ids)}
        n_u, n_s, k = len(user_ids), len(story_ids), self._k()
        self.beta0_ = 0.0
        self.psi_ = np.zeros(n_u) if self._has_effects else None
        self.gamma_ = np.zeros(n_s) if self._has_effects else None
        if k > 0:
            scale = 0.1 / np.sqrt(k)
            self.theta_ = rng.normal(0.0, scale, size=(n_u, k))
            self.lam_ = rng.normal(0.0, scale, size=(n_s, k))
        else:
            self.theta_ = None
            self.lam_ = None

    # -- prediction --------------------------------------------------------

    def _score(self, u_idx, s_idx, known_u, known_s):
        s = np.full(u_idx.shape, self.beta0_, dtype=float)
        if self._has_effects:
            s[known_u] += self.psi_[u_idx[known_u]]
            s[known_s] += self.gamma_[s_idx[known_s]]
        if self.theta_ is not None:
            both = known_u & known_s
            s[both] += np.sum(self.theta_[u_idx[both]] * self.lam_[s_idx[both]],
                              axis=1)
        return s

    def _lookup(self, X):
        X = np.asarray(X, dtype=np.int64)
        u_idx = np.array([self.user_index_.get(int(u), -1) for u in X[:, 0]])
        s_idx = np.array([self.story_index_.get(int(s), -1) for s in X[:, 1]])
        return u_idx, s_idx, u_idx >= 0, s_idx >= 0

    def predict(self, X, return_cold_start: bool = False):
        """Predicted engagement in (0, 1) per (user, story) row.

        Unknown entities fall back to the additive terms that are known
        (never latents); the optional mask reports those cold-start rows.
        """
        u_idx, s_idx, known_u, known_s = self._lookup(X)
        pred = expit(self._score(u_idx, s_idx, known_u, known_s))
        if return_cold_start:
            return pred, ~(known_u & known_s)
        return pred

    def predict_pair(self, user_id: int, story_id: int) -> float:
        return float(self.predict(np.array([[user_id, story_id]]))[0])

    # -- fitting -----------------------------------------------------------

    def fit(self, X, y, validation=None):
        X = np.asarray(X, dtype=np.int64)
        y = np.asarray(y, dtype=float)
        if X.shape[0] == 0:
            raise EmptyTrainSplit("no records to fit on")
        rng = rng_for(self.seed, "init", type(self).__name__, self._k())
        self._init_params(np.unique(X[:, 0]), np.unique(X[:, 1]), rng)
        u = np.array([self.user_index_[int(v)] for v in X[:, 0]])
        s = np.array([self.story_index_[int(v)] for v in X[:, 1]])

        blocks = self._blocks()
        adam_m = {name: np.zeros_like(p, dtype=float) for name, p in blocks.items()}
        adam_v = {name: np.zeros_like(p, dtype=float) for name, p in blocks.items()}
        t = 0
        best_val = np.inf
        best_params = None
        stale = 0
        shuffle_rng = rng_for(self.seed, "shuffle", type(self).__name__, self._k())
        n = X.shape[0]
        for epoch in range(self.epochs):
            order = shuffle_rng.permutation(n)
            for lo in range(0, n, self.batch_size):
                batch = order[lo:lo + self.batch_size]
                t += 1
                grads = self._batch_grads(u[batch], s[batch], y[batch])
                for name, p in self._blocks().items():
                    g = grads[name] + 2.0 * self.l2 * p
                    adam_m[name] = (self.adam_beta1 * adam_m[name]
                                    + (1 - self.adam_beta1) * g)
                    adam_v[name] = (self.adam_beta2 * adam_v[name]
                                    + (1 - self.adam_beta2) * g * g)
                    m_hat = adam_m[name] / (1 - self.adam_beta1 ** t)
                    v_hat = adam_v[name] / (1 - self.adam_beta2 ** t)
                    step = self.learning_rate * m_hat / (np.sqrt(v_hat)
                                                         + self.adam_eps)
                    self._apply_step(name, step)
            if not np.isfinite(self.beta0_):
                raise NonFiniteLoss("training diverged")
            if validation is not None:
                Xv, yv = validation
                val = float(np.mean((self.predict(Xv) - yv) ** 2))
                if not np.isfinite(val):
                    raise NonFiniteLoss("validation loss is not finite")
                if val < best_val - 1e-12:
                    best_val = val
                    best_params = self._snapshot()
                    stale = 0
                else:
                    stale += 1
                    if stale >= self.early_stop_patience:
                        break
        if best_params is not None:
            self._restore(best_params)
        return self

    def _blocks(self):
        blocks = {"beta0": np.array([self.beta0_])}
        if self._has_effects:
            blocks["psi"] = self.psi_
            blocks["gamma"] = self.gamma_
        if self.theta_ is not None:
            blocks["theta"] = self.theta_
            blocks["lam"] = self.lam_
        return blocks

    def _apply_step(self, name, step):
        if name == "beta0":
            self.beta0_ -= float(step[0])
        elif name == "psi":
            self.psi_ -= step
        elif name == "gamma":
            self.gamma_ -= step
        elif name == "theta":
            self.theta_ -= step
        elif name == "lam":
            self.lam_ -= step

    def _snapshot(self):
        return {name: np.array(p, copy=True)
                for name, p in self._blocks().items()}

    def _restore(self, params):
        self.beta0_ = float(params["beta0"][0])
        if self._has_effects:
            self.psi_ = params["psi"]
            self.gamma_ = params["gamma"]
        if "theta" in params:
            self.theta_ = params["theta"]
            self.lam_ = params["lam"]

    def _batch_grads(self, u, s, y):
        """Mean gradient of the squared-error data term over a batch."""
        score = np.full(u.shape, self.beta0_, dtype=float)
        if self._has_effects:
            score += self.psi_[u] + self.gamma_[s]
        if self.theta_ is not None:
            score += np.sum(self.theta_[u] * self.lam_[s], axis=1)
        p = expit(score)
        g = 2.0 * (p - y) * p * (1 - p) / u.size
        grads = {"beta0": np.array([g.sum()])}
        if self._has_effects:
            grads["psi"] = np.bincount(u, weights=g,
                                       minlength=self.psi_.size)
            grads["gamma"] = np.bincount(s, weights=g,
                                         minlength=self.gamma_.size)
        if self.theta_ is not None:
            k = self.theta_.shape[1]
            gt = np.empty_like(self.theta_)
            gl = np.empty_like(self.lam_)
            lam_s = self.lam_[s]
            theta_u = self.theta_[u]
            for d in range(k):
                gt[:, d] = np.bincount(u, weights=g * lam_s[:, d],
                                       minlength=gt.shape[0])
                gl[:, d] = np.bincount(s, weights=g * theta_u[:, d],
                                       minlength=gl.shape[0])
            grads["theta"] = gt
            grads["lam"] = gl
        return grads


class MeanModel(_SGDModel):
    """Constant prediction sigmoid(beta0), identical for every pair."""

    _has_effects = False

    def __init__(self, l2=0.0, learning_rate=0.05, epochs=50, batch_size=256,
                 adam_beta1=0.9, adam_beta2=0.999, adam_eps=1e-8, seed=0,
                 early_stop_patience=5):
        self.l2 = l2
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_eps = adam_eps
        self.seed = seed
        self.early_stop_patience = early_stop_patience


class TwoWayFixedEffects(_SGDModel):
    """Additive user and story effects through a sigmoid link."""

    def __init__(self, l2=1e-4, learning_rate=0.01, epochs=50, batch_size=256,
                 adam_beta1=0.9, adam_beta2=0.999, adam_eps=1e-8, seed=0,
                 early_stop_patience=5):
        self.l2 = l2
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_eps = adam_eps
        self.seed = seed
        self.early_stop_patience = early_stop_patience


class MatrixFactorization(_SGDModel):
    """Low-rank user/story latents plus additive effects, sigmoid link.

    With zero latents the prediction coincides exactly with the two-way
    fixed-effects model for the same additive parameters.
    """

    def __init__(self, k=8, l2=1e-4, learning_rate=0.01, epochs=50,
                 batch_size=256, adam_beta1=0.9, adam_beta2=0.999,
                 adam_eps=1e-8, seed=0, early_stop_patience=5):
        self.k = k
        self.l2 = l2
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_eps = adam_eps
        self.seed = seed
        self.early_stop_patience = early_stop_patience

    def _k(self) -> int:
        return self.k


MODEL_KINDS = {"mean": MeanModel, "twfe": TwoWayFixedEffects,
               "mf": MatrixFactorization}


def _kind_of(model) -> str:
    for name, cls in MODEL_KINDS.items():
        if type(model) is cls:
            return name
    raise TypeError(f"not a known model type: {type(model)}")


# ---------------------------------------------------------------------------
# Per-record loss and analytic gradient (single-record view used by the
# finite-difference checks).


def record_loss(model, user_id: int, story_id: int, y: float) -> float:
    """Squared error of one record plus L2 on the parameters it touches."""
    pred = model.predict_pair(user_id, story_id)
    loss = (pred - y) ** 2
    u = model.user_index_.get(user_id, -1)
    s = model.story_index_.get(story_id, -1)
    loss += model.l2 * model.beta0_ ** 2
    if model._has_effects:
        if u >= 0:
            loss += model.l2 * model.psi_[u] ** 2
        if s >= 0:
            loss += model.l2 * model.gamma_[s] ** 2
    if model.theta_ is not None and u >= 0 and s >= 0:
        loss += model.l2 * (np.sum(model.theta_[u] ** 2)
                            + np.sum(model.lam_[s] ** 2))
    return float(loss)


def gradient(model, user_id: int, story_id: int, y: float) -> dict:
    """Analytic gradient of record_loss w.r.t. every touched parameter."""
    u = model.user_index_.get(user_id, -1)
    s = model.story_index_.get(story_id, -1)
    pred = model.predict_pair(user_id, story_id)
    g = 2.0 * (pred - y) * pred * (1 - pred)
    out = {"beta0": g + 2.0 * model.l2 * model.beta0_}
    if model._has_effects:
        if u >= 0:
            out["psi"] = g + 2.0 * model.l2 * model.psi_[u]
        if s >= 0:
            out["gamma"] = g + 2.0 * model.l2 * model.gamma_[s]
    if model.theta_ is not None and u >= 0 and s >= 0:
        out["theta"] = g * model.lam_[s] + 2.0 * model.l2 * model.theta_[u]
        out["lam"] = g * model.theta_[u] + 2.0 * model.l2 * model.lam_[s]
    return out


# ---------------------------------------------------------------------------
# Evaluation, tuning, and the history-threshold grid


def evaluate_mse(model, data: LogDataset, include_skipped: bool = True) -> float:
    X, y, _ = dataset_xy(data, include_skipped)
    if y.size == 0:
        raise NoScorableRecords("no non-NA records to score")
    return float(np.mean((model.predict(X) - y) ** 2))


@dataclass
class TuningReport:
    model_kind: str
    candidates: list = field(default_factory=list)  # (k, l2, val_mse)
    selected: tuple | None = None  # (k, l2)
    test_mse: float = float("nan")  # best candidate, before the refit

    def as_rows(self):
        return [{"k": k, "l2": l2, "val_mse": mse}
                for k, l2, mse in self.candidates]


def _make_model(kind: str, k: int, l2: float, config: TrainConfig):
    common = dict(l2=l2, learning_rate=config.learning_rate,
                  epochs=config.epochs, batch_size=config.batch_size,
                  adam_beta1=config.adam_beta1, adam_beta2=config.adam_beta2,
                  adam_eps=config.adam_eps, seed=config.seed,
                  early_stop_patience=config.early_stop_patience)
    if kind == "mf":
        return MatrixFactorization(k=k, **common)
    return MODEL_KINDS[kind](**common)


def train(model_kind: str, data: LogDataset, config: TrainConfig,
          split: SplitSpec):
    """Tune on the validation split, then refit on the full dataset.

    For every (k, l2) candidate, fits on the train split and scores MSE on
    the validation split; the minimizer (ties to the first candidate) is
    refit on train+validation+test. Deterministic given the seeds.
    """
    X, y, days = dataset_xy(data, config.include_skipped)
    if y.size == 0:
        raise EmptyTrainSplit("dataset has no scorable records")
    labels = split.assign(y.size, days)
    tr, va = labels == 0, labels == 1
    if not tr.any():
        raise EmptyTrainSplit("train split is empty")

    if model_kind == "mf":
        candidates = list(itertools.product(config.k_grid, config.l2_grid))
    else:
        candidates = [(0, l2) for l2 in config.l2_grid]

    te = labels == 2
    report = TuningReport(model_kind=model_kind)
    best = None
    best_model = None
    for k, l2 in candidates:
        model = _make_model(model_kind, k, l2, config)
        model.fit(X[tr], y[tr], validation=(X[va], y[va]) if va.any() else None)
        val_mse = (float(np.mean((model.predict(X[va]) - y[va]) ** 2))
                   if va.any() else float("nan"))
        report.candidates.append((k, l2, val_mse))
        if best is None or (np.isfinite(val_mse)
                            and not (np.isfinite(best[2])
                                     and best[2] <= val_mse)):
            best = (k, l2, val_mse)
            best_model = model
    report.selected = (best[0], best[1])
    if te.any():
        report.test_mse = float(
            np.mean((best_model.predict(X[te]) - y[te]) ** 2))
    final = _make_model(model_kind, best[0], best[1], config)
    final.fit(X, y)
    return final, report


def eligibility(data: LogDataset, min_interactions: int = 60):
    """Users and stories with at least the threshold of scored interactions.

    Counts non-NA records on the raw dataset, independently per namespace;
    the bound is inclusive.
    """
    mask = data.scored
    u_ids, u_counts = np.unique(data.user_id[mask], return_counts=True)
    s_ids, s_counts = np.unique(data.story_id[mask], return_counts=True)
    users = set(int(u) for u in u_ids[u_counts >= min_interactions])
    stories = set(int(s) for s in s_ids[s_counts >= min_interactions])
    if min_interactions <= 0:
        users |= set(data.users)
        stories |= set(data.stories)
    return users, stories


def _interaction_counts(X):
    u_ids, u_counts = np.unique(X[:, 0], return_counts=True)
    s_ids, s_counts = np.unique(X[:, 1], return_counts=True)
    return dict(zip(u_ids.tolist(), u_counts.tolist())), \
        dict(zip(s_ids.tolist(), s_counts.tolist()))


def threshold_grid(data: LogDataset, user_thresholds, story_thresholds,
                   config: TrainConfig, split: SplitSpec,
                   model_kind: str = "mf"):
    """Test MSE per (user, story) history-threshold cell.

    One model is trained on the loosest filter (the smallest thresholds);
    each cell reports its MSE on the test-split subset whose users and
    stories meet that cell's minima, computed on the pre-filter dataset.
    Empty cells come back as NaN.
    """
    user_thresholds = sorted(user_thresholds)
    story_thresholds = sorted(story_thresholds)
    X, y, days = dataset_xy(data, config.include_skipped)
    u_counts, s_counts = _interaction_counts(X)
    u_n = np.array([u_counts[int(u)] for u in X[:, 0]])
    s_n = np.array([s_counts[int(s)] for s in X[:, 1]])
    labels = split.assign(y.size, days)
    tr, va, te = labels == 0, labels == 1, labels == 2

    loose = (u_n >= user_thresholds[0]) & (s_n >= story_thresholds[0])
    model = _make_model(model_kind, config.k_grid[0], config.l2_grid[0], config)
    model.fit(X[tr & loose], y[tr & loose],
              validation=(X[va & loose], y[va & loose]) if (va & loose).any()
              else None)

    grid = np.full((len(user_thresholds), len(story_thresholds)), np.nan)
    for i, ut in enumerate(user_thresholds):
        for j, st in enumerate(story_thresholds):
            cell = te & (u_n >= ut) & (s_n >= st)
            if cell.any():
                grid[i, j] = float(np.mean((model.predict(X[cell]) - y[cell]) ** 2))
    return grid, model


# ---------------------------------------------------------------------------
# Serialization: a self-describing JSON container.

MODEL_FORMAT_VERSION = 1


def data_fingerprint(X, y) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X).tobytes())
    h.update(np.ascontiguousarray(y).tobytes())
    return h.hexdigest()[:16]


def save_model(model, path, fingerprint: str = "") -> None:
    kind = _kind_of(model)
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": kind,
        "k": model._k(),
        "l2": model.l2,
        "seed": model.seed,
        "n_users": len(getattr(model, "user_index_", {})),
        "n_stories": len(getattr(model, "story_index_", {})),
        "data_fingerprint": fingerprint,
        "beta0": model.beta0_,
        "user_ids": sorted(model.user_index_, key=model.user_index_.get),
        "story_ids": sorted(model.story_index_, key=model.story_index_.get),
    }
    if model._has_effects:
        payload["psi"] = model.psi_.tolist()
        payload["gamma"] = model.gamma_.tolist()
    if model.theta_ is not None:
        payload["theta"] = model.theta_.tolist()
        payload["lam"] = model.lam_.tolist()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_model(path):
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptFile(str(exc)) from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CorruptFile("missing header")
    if payload["format_version"] != MODEL_FORMAT_VERSION:
        raise VersionMismatch(f"format_version {payload['format_version']}")
    try:
        kind = payload["kind"]
        k = payload["k"]
        model = _make_model(kind, k, payload["l2"],
                            TrainConfig(seed=payload["seed"]))
        model.user_index_ = {int(u): i for i, u in enumerate(payload["user_ids"])}
        model.story_index_ = {int(s): i
                              for i, s in enumerate(payload["story_ids"])}
        model.beta0_ = float(payload["beta0"])
        model.psi_ = (np.array(payload["psi"], dtype=float)
                      if model._has_effects else None)
        model.gamma_ = (np.array(payload["gamma"], dtype=float)
                        if model._has_effects else None)
        if k > 0:
            model.theta_ = np.array(payload["theta"], dtype=float)
            model.lam_ = np.array(payload["lam"], dtype=float)
            if model.theta_.ndim != 2 or model.theta_.shape[1] != k \
                    or model.lam_.shape[1] != k:
                raise VersionMismatch(
                    f"latent blocks disagree with header k={k}")
        else:
            model.theta_ = None
            model.lam_ = None
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptFile(str(exc)) from exc
    if model._has_effects and (
            model.psi_.size != len(model.user_index_)
            or model.gamma_.size != len(model.story_index_)):
        raise VersionMismatch("effect blocks disagree with entity counts")
    return model
