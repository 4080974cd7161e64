"""Distilling aggregated soft labels into a linear softmax classifier.

The student minimizes the mean KL divergence from the soft target to its
own predictive distribution, KLD(target ‖ softmax(Wx + b)), by mini-batch
gradient descent with seeded shuffling. With one-hot targets this objective
is cross-entropy minus the (constant) target entropy, so the gradients
coincide with ordinary classifier training; soft targets simply spread the
pull across classes.

Feature CSV schema: header ``item_id,f0..f{D-1},t0..t{K-1}``; the trained
model serializes to JSON.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .distributions import Categorical, _softmax_arr
from .errors import ConfigError, DimensionMismatch, EmptyInput, NonFiniteLoss, ParseError

MODEL_SCHEMA_VERSION = 1


@dataclass(frozen=True, eq=False)
class FeatureDataset:
    item_ids: tuple[str, ...]
    features: np.ndarray  # (n, D)
    targets: np.ndarray  # (n, K) rows are distributions
    gold: np.ndarray | None = None  # (n,) label indices, optional

    def __post_init__(self):
        object.__setattr__(self, "item_ids", tuple(self.item_ids))
        x = np.array(self.features, dtype=np.float64, copy=True)
        t = np.array(self.targets, dtype=np.float64, copy=True)
        n = len(self.item_ids)
        if n == 0:
            raise EmptyInput("feature dataset has no items")
        if x.ndim != 2 or x.shape[0] != n:
            raise DimensionMismatch(f"features shape {x.shape} for {n} items")
        if t.ndim != 2 or t.shape[0] != n or t.shape[1] < 2:
            raise DimensionMismatch(f"targets shape {t.shape} for {n} items")
        if not np.all(np.isfinite(x)):
            raise ValueError("features must be finite")
        if np.any(t < 0) or np.any(np.abs(t.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("target rows must be distributions")
        if self.gold is not None:
            g = np.array(self.gold, dtype=np.int64, copy=True)
            if g.shape != (n,) or np.any(g < 0) or np.any(g >= t.shape[1]):
                raise DimensionMismatch("gold labels must be per-item indices into the classes")
            g.flags.writeable = False
            object.__setattr__(self, "gold", g)
        x.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "targets", t)

    @property
    def n(self) -> int:
        return len(self.item_ids)

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def k(self) -> int:
        return self.targets.shape[1]


@dataclass(frozen=True, eq=False)
class LinearSoftmaxModel:
    weights: np.ndarray  # (K, D)
    bias: np.ndarray  # (K,)
    loss_trace: tuple[float, ...] = ()

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, copy=True)
        b = np.array(self.bias, dtype=np.float64, copy=True)
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise DimensionMismatch(f"weights {w.shape} and bias {b.shape} disagree")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("model parameters must be finite")
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "loss_trace", tuple(self.loss_trace))

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    # datasets up to batch_size train full-batch, where fixed-step descent on
    # this convex objective keeps the epoch trace non-increasing
    step_size: float = 0.5
    max_epochs: int = 500
    batch_size: int = 256
    l2: float = 0.0
    seed: int = 0
    tol: float = 1e-8

    def __post_init__(self):
        if self.step_size <= 0:
            raise ConfigError(f"step_size must be > 0, got {self.step_size}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.l2 < 0:
            raise ConfigError(f"l2 must be >= 0, got {self.l2}")


def _predict_batch(m: LinearSoftmaxModel, x: np.ndarray) -> np.ndarray:
    u = x @ m.weights.T + m.bias
    u -= u.max(axis=1, keepdims=True)
    z = np.exp(u)
    return z / z.sum(axis=1, keepdims=True)


def predict(m: LinearSoftmaxModel, x) -> Categorical:
    """softmax(Wx + b) for a single feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != m.d:
        raise DimensionMismatch(f"feature vector of dim {x.shape} for model with D={m.d}")
    return Categorical(_softmax_arr(m.weights @ x + m.bias))


def kld_loss(m: LinearSoftmaxModel, ds: FeatureDataset) -> float:
    """Mean KLD(target ‖ prediction); finite because predictions are
    strictly positive."""
    if ds.d != m.d or ds.k != m.k:
        raise DimensionMismatch(
            f"dataset (D={ds.d}, K={ds.k}) vs model (D={m.d}, K={m.k})"
        )
    p = _predict_batch(m, ds.features)
    t = ds.targets
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(t > 0, t * (np.log(t) - np.log(p)), 0.0)
    return max(float(terms.sum() / ds.n), 0.0)


def grad_kld(m: LinearSoftmaxModel, ds: FeatureDataset, l2: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient of ``kld_loss + l2 * ||W||^2`` w.r.t. (W, b).

    Per item the bias gradient is (prediction - target); the weight gradient
    is its outer product with the features.
    """
    if ds.d != m.d or ds.k != m.k:
        raise DimensionMismatch(
            f"dataset (D={ds.d}, K={ds.k}) vs model (D={m.d}, K={m.k})"
        )
    p = _predict_batch(m, ds.features)
    delta = (p - ds.targets) / ds.n  # (n, K)
    gw = delta.T @ ds.features + 2.0 * l2 * m.weights
    gb = delta.sum(axis=0)
    return gw, gb


def train(ds: FeatureDataset, cfg: TrainConfig = TrainConfig()) -> LinearSoftmaxModel:
    """Mini-batch gradient descent from zero init; deterministic under a
    fixed seed. The recorded trace holds the full-data objective before
    training and after every epoch; stops early when the epoch-over-epoch
    change falls below ``cfg.tol``."""
    rng = np.random.default_rng(cfg.seed)
    w = np.zeros((ds.k, ds.d))
    b = np.zeros(ds.k)

    def objective() -> float:
        model = LinearSoftmaxModel(w, b)
        return kld_loss(model, ds) + cfg.l2 * float(np.sum(w**2))

    trace = [objective()]
    for _ in range(cfg.max_epochs):
        order = rng.permutation(ds.n)
        for start in range(0, ds.n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = FeatureDataset(
                item_ids=tuple(ds.item_ids[i] for i in idx),
                features=ds.features[idx],
                targets=ds.targets[idx],
            )
            gw, gb = grad_kld(LinearSoftmaxModel(w, b), batch, l2=cfg.l2)
            w = w - cfg.step_size * gw
            b = b - cfg.step_size * gb
        loss = objective()
        if not np.isfinite(loss):
            raise NonFiniteLoss(
                f"objective became {loss!r} after epoch {len(trace)}; reduce step_size"
            )
        trace.append(loss)
        if abs(trace[-2] - trace[-1]) < cfg.tol:
            break
    return LinearSoftmaxModel(weights=w, bias=b, loss_trace=tuple(trace))


# ---------------------------------------------------------------------------
# File interfaces
# ---------------------------------------------------------------------------

def load_feature_csv(path: str | Path) -> FeatureDataset:
    """Read ``item_id,f0..f{D-1},t0..t{K-1}``."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInput(f"feature CSV {path} is empty") from None
        if not header or header[0].strip() != "item_id":
            raise ParseError(f"feature CSV must start with item_id, got {header[:1]}")
        f_cols = [h for h in header[1:] if h.startswith("f")]
        t_cols = [h for h in header[1:] if h.startswith("t")]
        d, k = len(f_cols), len(t_cols)
        expected = [f"f{j}" for j in range(d)] + [f"t{j}" for j in range(k)]
        if list(header[1:]) != expected or not f_cols or len(t_cols) < 2:
            raise ParseError(
                f"expected header item_id,f0..f{{D-1}},t0..t{{K-1}}, got {','.join(header)}"
            )
        item_ids: list[str] = []
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 1 + d + k:
                raise ParseError(f"line {lineno}: expected {1 + d + k} fields, got {len(row)}")
            item_ids.append(row[0])
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from exc
    if not item_ids:
        raise EmptyInput(f"feature CSV {path} has no data rows")
    data = np.asarray(rows, dtype=np.float64)
    return FeatureDataset(
        item_ids=tuple(item_ids), features=data[:, :d], targets=data[:, d:]
    )


def write_feature_csv(ds: FeatureDataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["item_id"]
            + [f"f{j}" for j in range(ds.d)]
            + [f"t{j}" for j in range(ds.k)]
        )
        for i, item_id in enumerate(ds.item_ids):
            writer.writerow(
                [item_id]
                + [repr(v) for v in ds.features[i].tolist()]
                + [repr(v) for v in ds.targets[i].tolist()]
            )


def model_to_dict(m: LinearSoftmaxModel) -> dict:
    return {
        "version": MODEL_SCHEMA_VERSION,
        "model_type": "linear_softmax",
        "weights": m.weights.tolist(),
        "bias": m.bias.tolist(),
    }


def model_from_dict(d: dict) -> LinearSoftmaxModel:
    if d.get("model_type") != "linear_softmax":
        raise ParseError(f"unknown model_type {d.get('model_type')!r}")
    return LinearSoftmaxModel(
        weights=np.asarray(d["weights"], dtype=np.float64),
        bias=np.asarray(d["bias"], dtype=np.float64),
    )


def save_model(m: LinearSoftmaxModel, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(m), fh, indent=2)
        fh.write("\n")


def load_model(path: str | Path) -> LinearSoftmaxModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


def write_loss_trace_csv(trace, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss"])
        for i, v in enumerate(trace):
            writer.writerow([i, repr(float(v))])
