"""Aggregation of an ensemble of per-item label distributions.

Four aggregators over M aligned views:

* ``average``: the arithmetic mean of the member distributions.
* ``js_centroid``: the distribution minimizing the sum of Jensen-Shannon
  divergences to the members, found by a hyperparameterless fixed-point
  iteration on the interior coordinates theta:

      theta_next = (grad F)^{-1}( mean_m grad F((theta_m + theta) / 2) )

  started from the average. F is the negative entropy; its gradient map
  (not F itself) is applied to the midpoints, since the update must land in
  eta-coordinates for the inverse map to return a point on the simplex.
  Each step provably does not increase the objective, and iteration stops
  once the decrease falls below tolerance.
* ``temperature_scaled_average``: per-method temperatures fitted by gradient
  descent on the mean pairwise JSD of the softened members plus an L2
  penalty on the temperatures (the JSD term alone is minimized by infinite
  temperatures that uniformize everything), then average.
* ``hybrid``: temperature scaling followed by the centroid.

Ensemble files are JSONL, one object per item:
``{"item_id": ..., "distributions": {method: [K floats]}}``; aggregate
output lines are ``{"item_id": ..., "aggregator": ..., "probs": [...],
"converged": bool}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Sequence, Union

import numpy as np

from .distributions import (
    Categorical,
    NaturalParams,
    _clamp_arr,
    _jsd_arr,
    from_natural,
    grad_neg_entropy,
    inv_grad_neg_entropy,
    to_natural,
    INTERIOR_EPS,
)
from .errors import ConfigError, DimensionMismatch, ParseError

AGGREGATORS = ("avg", "jsc", "temp", "hybrid")


@dataclass(frozen=True, eq=False)
class Ensemble:
    """M aligned distributions per item, one per soft-labeling method."""

    method_names: tuple[str, ...]
    item_ids: tuple[str, ...]
    probs: np.ndarray  # (M, n_items, K)

    def __post_init__(self):
        object.__setattr__(self, "method_names", tuple(self.method_names))
        object.__setattr__(self, "item_ids", tuple(self.item_ids))
        if len(set(self.method_names)) != len(self.method_names) or not self.method_names:
            raise ConfigError(f"method names must be non-empty and distinct: {self.method_names}")
        p = np.array(self.probs, dtype=np.float64, copy=True)
        expected = (len(self.method_names), len(self.item_ids))
        if p.ndim != 3 or p.shape[:2] != expected:
            raise DimensionMismatch(f"probs shape {p.shape}, expected {expected} x K")
        if p.shape[2] < 2:
            raise DimensionMismatch(f"need K >= 2 classes, got {p.shape[2]}")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=2) - 1.0) > 1e-9):
            raise ConfigError("every ensemble row must be a probability distribution")
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)

    @property
    def m(self) -> int:
        return len(self.method_names)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def k(self) -> int:
        return self.probs.shape[2]

    @classmethod
    def from_views(
        cls, item_ids: Sequence[str], views: dict[str, Sequence[Categorical]]
    ) -> "Ensemble":
        names = tuple(views.keys())
        stacked = np.stack(
            [np.stack([d.probs for d in views[name]]) for name in names]
        )
        return cls(method_names=names, item_ids=tuple(item_ids), probs=stacked)

    def member(self, name: str) -> np.ndarray:
        return self.probs[self.method_names.index(name)]


@dataclass(frozen=True, eq=False)
class Temperatures:
    """One fitted temperature per method, floored at the configured minimum."""

    method_names: tuple[str, ...]
    t: np.ndarray  # (M,)

    def __post_init__(self):
        object.__setattr__(self, "method_names", tuple(self.method_names))
        v = np.array(self.t, dtype=np.float64, copy=True)
        if v.shape != (len(self.method_names),):
            raise DimensionMismatch(f"{v.shape[0]} temperatures for {len(self.method_names)} methods")
        if np.any(v <= 0) or not np.all(np.isfinite(v)):
            raise ConfigError(f"temperatures must be positive and finite, got {v}")
        v.flags.writeable = False
        object.__setattr__(self, "t", v)


@dataclass(frozen=True)
class CccpConfig:
    max_iters: int = 200
    tol: float = 1e-10
    record_trace: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol <= 0:
            raise ConfigError(f"tol must be > 0, got {self.tol}")


@dataclass(frozen=True)
class TempFitConfig:
    lam: float = 0.01
    step_size: float = 0.05
    max_steps: int = 2000
    t_min: float = 0.25
    seed: int = 0  # reserved; the fixed-start descent is deterministic

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if self.step_size <= 0:
            raise ConfigError(f"step_size must be > 0, got {self.step_size}")
        if self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.t_min <= 0:
            raise ConfigError(f"t_min must be > 0, got {self.t_min}")


@dataclass(frozen=True, eq=False)
class JscResult:
    """Centroid output: one distribution per item plus convergence flags."""

    dists: list[Categorical]
    converged: list[bool]
    traces: list[list[float]] | None = None


def average(e: Ensemble) -> list[Categorical]:
    """Arithmetic mean over methods, per item."""
    mean = e.probs.mean(axis=0)
    return [Categorical(row) for row in mean]


def jsc_objective(q: Categorical, members: Sequence[Categorical]) -> float:
    """Sum of JSD(member ‖ q) over the members."""
    total = 0.0
    for p in members:
        if p.k != q.k:
            raise DimensionMismatch(f"member over {p.k} classes vs candidate over {q.k}")
        total += _jsd_arr(p.probs, q.probs)
    return total


def cccp_step(theta_t: NaturalParams, member_thetas: Sequence[NaturalParams]) -> NaturalParams:
    """One fixed-point update of the centroid iteration."""
    if not member_thetas:
        raise ConfigError("at least one member required")
    acc = np.zeros(theta_t.dim)
    for tm in member_thetas:
        if tm.dim != theta_t.dim:
            raise DimensionMismatch(f"member dim {tm.dim} vs iterate dim {theta_t.dim}")
        acc += grad_neg_entropy(NaturalParams(0.5 * (tm.theta + theta_t.theta)))
    return inv_grad_neg_entropy(acc / len(member_thetas))


def _js_centroid_single(
    member_probs: np.ndarray, cfg: CccpConfig
) -> tuple[Categorical, bool, list[float]]:
    members = [Categorical(_clamp_arr(row, INTERIOR_EPS)) for row in member_probs]
    member_thetas = [to_natural(p) for p in members]
    theta = to_natural(Categorical(np.mean([p.probs for p in members], axis=0)))
    obj = jsc_objective(from_natural(theta), members)
    trace = [obj]
    converged = False
    for _ in range(cfg.max_iters):
        theta_next = cccp_step(theta, member_thetas)
        obj_next = jsc_objective(from_natural(theta_next), members)
        trace.append(obj_next)
        theta = theta_next
        if obj - obj_next < cfg.tol:
            converged = True
            obj = obj_next
            break
        obj = obj_next
    return from_natural(theta), converged, trace


def js_centroid(e: Ensemble, cfg: CccpConfig = CccpConfig()) -> JscResult:
    """Jensen-Shannon centroid per item via the fixed-point iteration.

    Members are clamped to the simplex interior; the iteration starts from
    their average. Items that exhaust ``max_iters`` while still improving by
    at least ``tol`` are flagged ``converged=False`` but a distribution is
    returned regardless.
    """
    dists: list[Categorical] = []
    converged: list[bool] = []
    traces: list[list[float]] = []
    for i in range(e.n_items):
        d, ok, trace = _js_centroid_single(e.probs[:, i, :], cfg)
        dists.append(d)
        converged.append(ok)
        if cfg.record_trace:
            traces.append(trace)
    return JscResult(dists=dists, converged=converged, traces=traces if cfg.record_trace else None)


# ---------------------------------------------------------------------------
# Temperature scaling
# ---------------------------------------------------------------------------

def _scaled_members(logits: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Softmax of logits / t per member; logits (M, n, K), t (M,)."""
    u = logits / t[:, None, None]
    u -= u.max(axis=2, keepdims=True)
    z = np.exp(u)
    return z / z.sum(axis=2, keepdims=True)


def temp_loss(logits: np.ndarray, t: np.ndarray, lam: float) -> float:
    """Mean pairwise JSD of the softened members, averaged over items and
    normalized by the M(M-1)/2 pair count, plus lam * sum(t**2)."""
    m, n, _ = logits.shape
    p = _scaled_members(logits, t)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_p = np.where(p > 0, np.log(p), 0.0)
    ent = -(p * log_p).sum(axis=2)  # (M, n)
    total = 0.0
    for j in range(m):
        for k in range(j + 1, m):
            s = 0.5 * (p[j] + p[k])
            with np.errstate(divide="ignore", invalid="ignore"):
                log_s = np.where(s > 0, np.log(s), 0.0)
            ent_s = -(s * log_s).sum(axis=1)
            total += float(np.sum(ent_s - 0.5 * ent[j] - 0.5 * ent[k]))
    z = m * (m - 1) / 2
    return total / (z * n) + lam * float(np.sum(t**2))


def temp_loss_grad(logits: np.ndarray, t: np.ndarray, lam: float) -> np.ndarray:
    """Analytic gradient of :func:`temp_loss` with respect to t."""
    m, n, _ = logits.shape
    p = _scaled_members(logits, t)
    log_p = np.log(p)  # softened members are strictly positive
    # d p_c / d T = (p_c / T^2) * (<l>_p - l_c)
    lbar = (p * logits).sum(axis=2, keepdims=True)
    dp_dt = p * (lbar - logits) / (t[:, None, None] ** 2)
    grad = np.zeros(m)
    for j in range(m):
        for k in range(j + 1, m):
            s = 0.5 * (p[j] + p[k])
            log_s = np.log(s)
            # d JSD / d p_j,c = 0.5 (log p_j,c - log s_c)
            grad[j] += float(np.sum(0.5 * (log_p[j] - log_s) * dp_dt[j]))
            grad[k] += float(np.sum(0.5 * (log_p[k] - log_s) * dp_dt[k]))
    z = m * (m - 1) / 2
    return grad / (z * n) + 2.0 * lam * t


def fit_temperatures(e: Ensemble, cfg: TempFitConfig = TempFitConfig()) -> Temperatures:
    """Fit one temperature per method by projected gradient descent from T=1."""
    if e.m < 2:
        raise ConfigError(f"temperature fitting needs at least 2 methods, got {e.m}")
    logits = _ensemble_logits(e)
    t = np.ones(e.m)
    for _ in range(cfg.max_steps):
        g = temp_loss_grad(logits, t, cfg.lam)
        t_next = np.maximum(t - cfg.step_size * g, cfg.t_min)
        if np.array_equal(t_next, t):
            break
        t = t_next
    return Temperatures(method_names=e.method_names, t=t)


def _ensemble_logits(e: Ensemble) -> np.ndarray:
    logits = np.empty_like(e.probs)
    for mi in range(e.m):
        for i in range(e.n_items):
            logits[mi, i] = np.log(_clamp_arr(e.probs[mi, i], INTERIOR_EPS))
    return logits


def apply_temperatures(e: Ensemble, t: Temperatures) -> Ensemble:
    """Soften every member: softmax(log(clamped probs) / T_method)."""
    if t.method_names != e.method_names:
        raise ConfigError(
            f"temperature methods {t.method_names} do not match ensemble {e.method_names}"
        )
    scaled = _scaled_members(_ensemble_logits(e), t.t)
    return Ensemble(method_names=e.method_names, item_ids=e.item_ids, probs=scaled)


def temperature_scaled_average(e: Ensemble, cfg: TempFitConfig = TempFitConfig()) -> list[Categorical]:
    """Fit temperatures, soften, then average."""
    return average(apply_temperatures(e, fit_temperatures(e, cfg)))


def hybrid(
    e: Ensemble,
    tcfg: TempFitConfig = TempFitConfig(),
    ccfg: CccpConfig = CccpConfig(),
) -> JscResult:
    """Temperature-scale the ensemble, then take its Jensen-Shannon centroid."""
    return js_centroid(apply_temperatures(e, fit_temperatures(e, tcfg)), ccfg)


# ---------------------------------------------------------------------------
# JSONL interfaces
# ---------------------------------------------------------------------------

PathOrFile = Union[str, Path, IO[str]]


def write_ensemble_jsonl(e: Ensemble, target: PathOrFile) -> None:
    def _write(fh):
        for i, item_id in enumerate(e.item_ids):
            line = {
                "item_id": item_id,
                "distributions": {
                    name: e.probs[mi, i].tolist() for mi, name in enumerate(e.method_names)
                },
            }
            fh.write(json.dumps(line) + "\n")

    if isinstance(target, (str, Path)):
        with open(target, "w", encoding="utf-8", newline="") as fh:
            _write(fh)
    else:
        _write(target)


def read_ensemble_jsonl(source: PathOrFile) -> Ensemble:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    else:
        lines = source.readlines()
    item_ids: list[str] = []
    rows: list[dict] = []
    names: tuple[str, ...] | None = None
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
            item_ids.append(obj["item_id"])
            dists = obj["distributions"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ParseError(f"ensemble line {lineno}: {exc}") from exc
        if names is None:
            names = tuple(dists.keys())
        elif tuple(dists.keys()) != names:
            raise ParseError(f"ensemble line {lineno}: methods {tuple(dists.keys())} != {names}")
        rows.append(dists)
    if not rows:
        raise ParseError("ensemble file has no lines")
    probs = np.array([[row[name] for row in rows] for name in names], dtype=np.float64)
    return Ensemble(method_names=names, item_ids=tuple(item_ids), probs=probs)


def write_aggregate_jsonl(
    item_ids: Sequence[str],
    aggregator: str,
    dists: Sequence[Categorical],
    converged: Sequence[bool],
    target: PathOrFile,
) -> None:
    def _write(fh):
        for item_id, d, ok in zip(item_ids, dists, converged):
            line = {
                "item_id": item_id,
                "aggregator": aggregator,
                "probs": d.probs.tolist(),
                "converged": bool(ok),
            }
            fh.write(json.dumps(line) + "\n")

    if isinstance(target, (str, Path)):
        with open(target, "w", encoding="utf-8", newline="") as fh:
            _write(fh)
    else:
        _write(target)


def read_aggregate_jsonl(source: PathOrFile) -> tuple[tuple[str, ...], str, np.ndarray, list[bool]]:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    else:
        lines = source.readlines()
    item_ids: list[str] = []
    probs: list[list[float]] = []
    converged: list[bool] = []
    aggregator = None
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
            item_ids.append(obj["item_id"])
            probs.append(obj["probs"])
            converged.append(bool(obj["converged"]))
            aggregator = obj["aggregator"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ParseError(f"aggregate line {lineno}: {exc}") from exc
    if not item_ids:
        raise ParseError("aggregate file has no lines")
    return tuple(item_ids), aggregator, np.asarray(probs, dtype=np.float64), converged
