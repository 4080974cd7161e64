"""Latent-truth models fit by EM: per-annotator confusion matrices, and a
competence/spam mixture with a per-record faithful/spam switch.

Both models treat the true class of each item as a latent variable and
return its posterior per item; those posteriors are the "model-based" views
fed to the aggregation stage.

Confusion model: true class t ~ class prior; annotator a emits label l with
probability confusion[a][t, l]. Competence model: each record flips a coin
with the annotator's competence; heads emits the true label exactly, tails
draws from the annotator's spam distribution (true-class prior uniform).

Fitting runs expectation-maximization with additive pseudo-count smoothing
on every M-step count statistic. Smoothing makes the M step a MAP rather
than an ML update, which can in rare cases nudge the data log-likelihood
down a hair; a step that would lower it reverts to the previous iterate and
stops, so the recorded trace is non-decreasing by construction. Multiple
seeded restarts (the first from a deterministic warm start, later ones
jittered) guard against bad local optima; the best final log-likelihood
wins, first restart on ties.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .annotations import AnnotationSet, LabelSpace, standard_normalize, vote_counts
from .distributions import Categorical
from .errors import ConfigError, DegenerateInput, LabelSpaceMismatch

MODEL_SCHEMA_VERSION = 1


@dataclass(frozen=True, eq=False)
class EmConfig:
    max_iters: int = 100
    tol: float = 1e-6
    smoothing: float = 0.01
    restarts: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol <= 0:
            raise ConfigError(f"tol must be > 0, got {self.tol}")
        if self.smoothing < 0:
            raise ConfigError(f"smoothing must be >= 0, got {self.smoothing}")
        if self.restarts < 1:
            raise ConfigError(f"restarts must be >= 1, got {self.restarts}")


def _check_trace(trace: tuple[float, ...]) -> None:
    for a, b in zip(trace, trace[1:]):
        if b < a - 1e-9:
            raise ValueError(f"log-likelihood trace decreased: {a} -> {b}")


def _check_posteriors(post: np.ndarray, n: int, k: int) -> np.ndarray:
    p = np.array(post, dtype=np.float64, copy=True)
    if p.shape != (n, k):
        raise ValueError(f"posterior shape {p.shape}, expected {(n, k)}")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("posterior rows must be distributions")
    p.flags.writeable = False
    return p


@dataclass(frozen=True, eq=False)
class DawidSkeneModel:
    label_space: LabelSpace
    item_ids: tuple[str, ...]
    annotator_ids: tuple[str, ...]
    class_prior: Categorical
    confusion: np.ndarray  # (A, K, K): [annotator, true class, emitted label]
    posteriors: np.ndarray  # (n_items, K)
    log_likelihood_trace: tuple[float, ...]

    def __post_init__(self):
        k = self.label_space.k
        c = np.array(self.confusion, dtype=np.float64, copy=True)
        if c.shape != (len(self.annotator_ids), k, k):
            raise ValueError(f"confusion shape {c.shape}")
        if np.any(c < 0) or np.any(np.abs(c.sum(axis=2) - 1.0) > 1e-9):
            raise ValueError("confusion rows must be distributions")
        c.flags.writeable = False
        object.__setattr__(self, "confusion", c)
        object.__setattr__(
            self, "posteriors", _check_posteriors(self.posteriors, len(self.item_ids), k)
        )
        object.__setattr__(self, "log_likelihood_trace", tuple(self.log_likelihood_trace))
        _check_trace(self.log_likelihood_trace)

    @property
    def posterior_dists(self) -> list[Categorical]:
        return [Categorical(row) for row in self.posteriors]


@dataclass(frozen=True, eq=False)
class MaceModel:
    label_space: LabelSpace
    item_ids: tuple[str, ...]
    annotator_ids: tuple[str, ...]
    competence: np.ndarray  # (A,) probability of answering faithfully
    spam_dist: np.ndarray  # (A, K) labels emitted when spamming
    posteriors: np.ndarray  # (n_items, K)
    log_likelihood_trace: tuple[float, ...]

    def __post_init__(self):
        k = self.label_space.k
        a = len(self.annotator_ids)
        comp = np.array(self.competence, dtype=np.float64, copy=True)
        if comp.shape != (a,) or np.any(comp < 0) or np.any(comp > 1):
            raise ValueError("competence must be per-annotator values in [0, 1]")
        comp.flags.writeable = False
        spam = np.array(self.spam_dist, dtype=np.float64, copy=True)
        if spam.shape != (a, k) or np.any(spam < 0) or np.any(np.abs(spam.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("spam_dist rows must be distributions")
        spam.flags.writeable = False
        object.__setattr__(self, "competence", comp)
        object.__setattr__(self, "spam_dist", spam)
        object.__setattr__(
            self, "posteriors", _check_posteriors(self.posteriors, len(self.item_ids), k)
        )
        object.__setattr__(self, "log_likelihood_trace", tuple(self.log_likelihood_trace))
        _check_trace(self.log_likelihood_trace)

    @property
    def posterior_dists(self) -> list[Categorical]:
        return [Categorical(row) for row in self.posteriors]


class _Indexed:
    """Record arrays for vectorized E/M steps."""

    def __init__(self, a: AnnotationSet):
        self.item_ids = a.item_ids
        self.annotator_ids = a.annotator_ids
        self.k = a.label_space.k
        item_index = {it: i for i, it in enumerate(self.item_ids)}
        ann_index = {an: i for i, an in enumerate(self.annotator_ids)}
        self.item = np.array([item_index[r.item_id] for r in a.records], dtype=np.int64)
        self.ann = np.array([ann_index[r.annotator_id] for r in a.records], dtype=np.int64)
        self.label = np.array([r.label_index for r in a.records], dtype=np.int64)
        self.n = len(self.item_ids)
        self.a = len(self.annotator_ids)
        self.r = len(a.records)


def _run_em(
    init_params,
    e_step: Callable,
    m_step: Callable,
    cfg: EmConfig,
):
    """Alternate E and M from ``init_params``; stop on |delta ll| < tol,
    max_iters, or a smoothing-induced dip (revert and keep the previous
    iterate). Returns (params, posteriors, trace)."""
    params = init_params
    best_params = None
    posteriors = None
    ll = -np.inf
    trace: list[float] = []
    for _ in range(cfg.max_iters):
        new_post, new_ll, stats = e_step(params)
        if new_ll < ll:
            break
        best_params, posteriors, ll = params, new_post, new_ll
        trace.append(new_ll)
        if len(trace) >= 2 and trace[-1] - trace[-2] < cfg.tol:
            break
        params = m_step(stats)
    return best_params, posteriors, trace


# ---------------------------------------------------------------------------
# Confusion-matrix model
# ---------------------------------------------------------------------------

def _ds_e_step(idx: _Indexed, params):
    prior, confusion = params
    with np.errstate(divide="ignore"):
        log_prior = np.log(prior)
        log_conf = np.log(confusion)
    log_post = np.tile(log_prior, (idx.n, 1))
    # contribution of record r to item's score for true class k: log conf[a_r, k, l_r]
    np.add.at(log_post, idx.item, log_conf[idx.ann, :, idx.label])
    norm = logsumexp(log_post, axis=1)
    if not np.all(np.isfinite(norm)):
        bad = idx.item_ids[int(np.flatnonzero(~np.isfinite(norm))[0])]
        raise DegenerateInput(f"item {bad!r} has zero likelihood under every class")
    post = np.exp(log_post - norm[:, None])
    return post, float(np.sum(norm)), post


def _ds_m_step(idx: _Indexed, cfg: EmConfig):
    def m_step(post: np.ndarray):
        s = cfg.smoothing
        prior = (post.sum(axis=0) + s) / (idx.n + s * idx.k)
        counts = np.zeros((idx.a, idx.k, idx.k))
        np.add.at(counts, (idx.ann, slice(None), idx.label), post[idx.item])
        counts += s
        totals = counts.sum(axis=2, keepdims=True)
        with np.errstate(invalid="ignore"):
            confusion = counts / totals
        # rows with no mass at all (possible only at smoothing=0) carry no
        # information; leave them uniform
        confusion = np.where(totals > 0, confusion, 1.0 / idx.k)
        return prior, confusion

    return m_step


def _ds_init_resp(idx: _Indexed, a: AnnotationSet, rng: np.random.Generator | None) -> np.ndarray:
    resp = np.stack([d.probs for d in standard_normalize(vote_counts(a))])
    if rng is not None:
        # jitter uses one scalar per item (tempering + uniform mixing) so a
        # label permutation permutes the jittered start identically
        gamma = rng.uniform(0.5, 2.0, size=idx.n)
        w = rng.uniform(0.0, 0.5, size=idx.n)
        resp = resp ** gamma[:, None]
        resp /= resp.sum(axis=1, keepdims=True)
        resp = (1.0 - w[:, None]) * resp + w[:, None] / idx.k
    return resp


def _fit_ds_restart(a: AnnotationSet, cfg: EmConfig, restart: int) -> DawidSkeneModel:
    idx = _Indexed(a)
    rng = np.random.default_rng((cfg.seed, restart)) if restart > 0 else None
    m_step = _ds_m_step(idx, cfg)
    init_params = m_step(_ds_init_resp(idx, a, rng))
    params, post, trace = _run_em(init_params, lambda p: _ds_e_step(idx, p), m_step, cfg)
    prior, confusion = params
    return DawidSkeneModel(
        label_space=a.label_space,
        item_ids=idx.item_ids,
        annotator_ids=idx.annotator_ids,
        class_prior=Categorical(prior),
        confusion=confusion,
        posteriors=post,
        log_likelihood_trace=tuple(trace),
    )


def fit_dawid_skene(a: AnnotationSet, cfg: EmConfig = EmConfig()) -> DawidSkeneModel:
    """Fit the confusion-matrix model; best of ``cfg.restarts`` runs."""
    best = None
    for r in range(cfg.restarts):
        model = _fit_ds_restart(a, cfg, r)
        if best is None or model.log_likelihood_trace[-1] > best.log_likelihood_trace[-1]:
            best = model
    return best


# ---------------------------------------------------------------------------
# Competence/spam model
# ---------------------------------------------------------------------------

def _mace_e_step(idx: _Indexed, params):
    competence, spam = params
    c_r = competence[idx.ann]
    spam_r = (1.0 - c_r) * spam[idx.ann, idx.label]  # (R,) spam part, any true class
    f = np.tile(spam_r[:, None], (1, idx.k))
    f[np.arange(idx.r), idx.label] += c_r  # faithful part only where t == emitted
    with np.errstate(divide="ignore"):
        log_f = np.log(f)
    log_post = np.full((idx.n, idx.k), -np.log(idx.k))  # uniform true-class prior
    np.add.at(log_post, idx.item, log_f)
    norm = logsumexp(log_post, axis=1)
    if not np.all(np.isfinite(norm)):
        bad = idx.item_ids[int(np.flatnonzero(~np.isfinite(norm))[0])]
        raise DegenerateInput(f"item {bad!r} has zero likelihood under every class")
    post = np.exp(log_post - norm[:, None])
    # P(faithful | data) per record: only t = emitted label has a faithful path
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = post[idx.item, idx.label] * c_r / f[np.arange(idx.r), idx.label]
    phi = np.where(f[np.arange(idx.r), idx.label] > 0, phi, 0.0)
    return post, float(np.sum(norm)), phi


def _mace_m_step(idx: _Indexed, cfg: EmConfig):
    def m_step(phi: np.ndarray):
        s = cfg.smoothing
        n_per_ann = np.bincount(idx.ann, minlength=idx.a).astype(np.float64)
        faithful = np.bincount(idx.ann, weights=phi, minlength=idx.a)
        competence = (faithful + s) / (n_per_ann + 2.0 * s)
        if s == 0:
            competence = np.where(n_per_ann > 0, competence, 0.5)
        spam_counts = np.zeros((idx.a, idx.k))
        np.add.at(spam_counts, (idx.ann, idx.label), 1.0 - phi)
        spam_counts += s
        totals = spam_counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore"):
            spam = spam_counts / totals
        spam = np.where(totals > 0, spam, 1.0 / idx.k)
        return np.clip(competence, 0.0, 1.0), spam

    return m_step


def _fit_mace_restart(a: AnnotationSet, cfg: EmConfig, restart: int) -> MaceModel:
    idx = _Indexed(a)
    if restart == 0:
        competence = np.full(idx.a, 0.8)
    else:
        # per-annotator scalar jitter keeps label-permutation equivariance
        rng = np.random.default_rng((cfg.seed, restart))
        competence = rng.uniform(0.5, 0.95, size=idx.a)
    spam = np.full((idx.a, idx.k), 1.0 / idx.k)
    params, post, trace = _run_em(
        (competence, spam),
        lambda p: _mace_e_step(idx, p),
        _mace_m_step(idx, cfg),
        cfg,
    )
    competence, spam = params
    return MaceModel(
        label_space=a.label_space,
        item_ids=idx.item_ids,
        annotator_ids=idx.annotator_ids,
        competence=competence,
        spam_dist=spam,
        posteriors=post,
        log_likelihood_trace=tuple(trace),
    )


def fit_mace(a: AnnotationSet, cfg: EmConfig = EmConfig()) -> MaceModel:
    """Fit the competence/spam model; best of ``cfg.restarts`` runs."""
    best = None
    for r in range(cfg.restarts):
        model = _fit_mace_restart(a, cfg, r)
        if best is None or model.log_likelihood_trace[-1] > best.log_likelihood_trace[-1]:
            best = model
    return best


def log_likelihood(model: DawidSkeneModel | MaceModel, a: AnnotationSet) -> float:
    """Marginal log-likelihood of all records in ``a`` under ``model``."""
    if model.label_space.labels != a.label_space.labels:
        raise LabelSpaceMismatch(
            f"model labels {list(model.label_space.labels)} vs data {list(a.label_space.labels)}"
        )
    missing = set(a.annotator_ids) - set(model.annotator_ids)
    if missing:
        raise LabelSpaceMismatch(f"annotators unseen by the model: {sorted(missing)}")
    idx = _Indexed(a)
    # remap annotator indices onto the model's ordering
    model_ann = {an: i for i, an in enumerate(model.annotator_ids)}
    idx.ann = np.array([model_ann[an] for an in idx.annotator_ids], dtype=np.int64)[idx.ann]
    if isinstance(model, DawidSkeneModel):
        _, ll, _ = _ds_e_step(idx, (model.class_prior.probs, model.confusion))
    else:
        _, ll, _ = _mace_e_step(idx, (model.competence, model.spam_dist))
    return ll


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def model_to_dict(model: DawidSkeneModel | MaceModel) -> dict:
    base = {
        "version": MODEL_SCHEMA_VERSION,
        "labels": list(model.label_space.labels),
        "item_ids": list(model.item_ids),
        "annotator_ids": list(model.annotator_ids),
        "posteriors": model.posteriors.tolist(),
        "log_likelihood_trace": list(model.log_likelihood_trace),
    }
    if isinstance(model, DawidSkeneModel):
        base["model_type"] = "dawid_skene"
        base["class_prior"] = model.class_prior.probs.tolist()
        base["confusion"] = model.confusion.tolist()
    elif isinstance(model, MaceModel):
        base["model_type"] = "mace"
        base["competence"] = model.competence.tolist()
        base["spam_dist"] = model.spam_dist.tolist()
    else:
        raise TypeError(f"unknown model type {type(model)!r}")
    return base


def model_from_dict(d: dict) -> DawidSkeneModel | MaceModel:
    common = dict(
        label_space=LabelSpace(tuple(d["labels"])),
        item_ids=tuple(d["item_ids"]),
        annotator_ids=tuple(d["annotator_ids"]),
        posteriors=np.asarray(d["posteriors"], dtype=np.float64),
        log_likelihood_trace=tuple(d["log_likelihood_trace"]),
    )
    if d["model_type"] == "dawid_skene":
        return DawidSkeneModel(
            class_prior=Categorical(np.asarray(d["class_prior"])),
            confusion=np.asarray(d["confusion"], dtype=np.float64),
            **common,
        )
    if d["model_type"] == "mace":
        return MaceModel(
            competence=np.asarray(d["competence"], dtype=np.float64),
            spam_dist=np.asarray(d["spam_dist"], dtype=np.float64),
            **common,
        )
    raise ValueError(f"unknown model_type {d.get('model_type')!r}")


def save_model(model: DawidSkeneModel | MaceModel, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=2)
        fh.write("\n")


def load_model(path: str | Path) -> DawidSkeneModel | MaceModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
