"""Evaluation: macro-F1, calibrated log-likelihood, and ensemble geometry.

The calibrated log-likelihood (CLL) makes uncertainty comparable across
predictors: split the evaluation items in half, fit a single temperature on
one half by minimizing the average negative log-likelihood of
softmax(log p / T), score the scaled log-likelihood on the other half, and
average over several seeded splits.

``hub_analysis`` measures, per ensemble method, how far its distributions
sit from an aggregate and from the other members; correlating the two
distances shows whether an aggregator gravitates toward regions where many
members agree.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .aggregation import Ensemble
from .distributions import Categorical, _clamp_arr, _jsd_arr, INTERIOR_EPS
from .errors import ConfigError, ConstantSeries, DimensionMismatch, EmptyInput, LengthMismatch

GOLDEN_RATIO = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class CllConfig:
    n_splits: int = 5
    seed: int = 0
    t_bounds: tuple[float, float] = (0.05, 50.0)

    def __post_init__(self):
        if self.n_splits < 1:
            raise ConfigError(f"n_splits must be >= 1, got {self.n_splits}")
        lo, hi = self.t_bounds
        if lo <= 0 or hi <= lo:
            raise ConfigError(f"t_bounds must satisfy 0 < low < high, got {self.t_bounds}")


@dataclass(frozen=True, eq=False)
class EvalReport:
    macro_f1: float
    cll: float
    split_nlls: tuple[float, ...]  # test-half NLL per split (CLL = mean of negations)
    split_temperatures: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "macro_f1": self.macro_f1,
            "cll": self.cll,
            "split_nlls": list(self.split_nlls),
            "split_temperatures": list(self.split_temperatures),
        }


def macro_f1(preds: Sequence[int], golds: Sequence[int], n_classes: int | None = None) -> float:
    """Unweighted mean over classes of 2pr/(p+r); 0 where p + r = 0."""
    preds = np.asarray(preds, dtype=np.int64)
    golds = np.asarray(golds, dtype=np.int64)
    if preds.shape != golds.shape or preds.ndim != 1 or preds.size == 0:
        raise LengthMismatch(f"preds {preds.shape} vs golds {golds.shape}")
    classes = range(n_classes) if n_classes else sorted(set(golds.tolist()) | set(preds.tolist()))
    scores = []
    for c in classes:
        tp = int(np.sum((preds == c) & (golds == c)))
        fp = int(np.sum((preds == c) & (golds != c)))
        fn = int(np.sum((preds != c) & (golds == c)))
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2 * p * r / (p + r) if p + r else 0.0)
    return float(np.mean(scores))


def _probs_matrix(probs: Sequence[Categorical] | np.ndarray) -> np.ndarray:
    if isinstance(probs, np.ndarray):
        return probs
    return np.stack([p.probs for p in probs])


def nll(probs: Sequence[Categorical] | np.ndarray, golds: Sequence[int]) -> float:
    """Mean negative log probability of the gold labels, after interior
    clamping so exact zeros never produce infinities."""
    mat = _probs_matrix(probs)
    golds = np.asarray(golds, dtype=np.int64)
    if mat.shape[0] != golds.shape[0]:
        raise LengthMismatch(f"{mat.shape[0]} distributions vs {golds.shape[0]} golds")
    if mat.shape[0] == 0:
        raise EmptyInput("nll of zero items")
    clamped = np.apply_along_axis(_clamp_arr, 1, mat, INTERIOR_EPS)
    return float(-np.mean(np.log(clamped[np.arange(len(golds)), golds])))


def _scale_probs(mat: np.ndarray, t: float) -> np.ndarray:
    logits = np.log(np.apply_along_axis(_clamp_arr, 1, mat, INTERIOR_EPS))
    u = logits / t
    u -= u.max(axis=1, keepdims=True)
    z = np.exp(u)
    return z / z.sum(axis=1, keepdims=True)


def fit_cll_temperature(
    probs_val: Sequence[Categorical] | np.ndarray,
    golds_val: Sequence[int],
    cfg: CllConfig = CllConfig(),
) -> float:
    """Golden-section search for the temperature minimizing the validation
    NLL of the temperature-scaled predictions."""
    mat = _probs_matrix(probs_val)
    golds = np.asarray(golds_val, dtype=np.int64)
    if mat.shape[0] == 0:
        raise EmptyInput("temperature fit needs at least one item")
    if mat.shape[0] != golds.shape[0]:
        raise LengthMismatch(f"{mat.shape[0]} distributions vs {golds.shape[0]} golds")

    logits = np.log(np.apply_along_axis(_clamp_arr, 1, mat, INTERIOR_EPS))
    rows = np.arange(len(golds))

    def objective(t: float) -> float:
        u = logits / t
        u -= u.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(u).sum(axis=1))
        return float(-np.mean(u[rows, golds] - log_norm))

    lo, hi = cfg.t_bounds
    x1 = hi - GOLDEN_RATIO * (hi - lo)
    x2 = lo + GOLDEN_RATIO * (hi - lo)
    f1, f2 = objective(x1), objective(x2)
    while hi - lo > 1e-6:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - GOLDEN_RATIO * (hi - lo)
            f1 = objective(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + GOLDEN_RATIO * (hi - lo)
            f2 = objective(x2)
    return 0.5 * (lo + hi)


def calibrated_log_likelihood(
    probs: Sequence[Categorical] | np.ndarray,
    golds: Sequence[int],
    cfg: CllConfig = CllConfig(),
) -> float:
    """Mean over seeded half/half splits of the test-half temperature-scaled
    log-likelihood (temperature fitted on the other half)."""
    return _cll_detail(probs, golds, cfg)[0]


def _cll_detail(
    probs: Sequence[Categorical] | np.ndarray,
    golds: Sequence[int],
    cfg: CllConfig,
) -> tuple[float, list[float], list[float]]:
    mat = _probs_matrix(probs)
    golds = np.asarray(golds, dtype=np.int64)
    if mat.shape[0] != golds.shape[0]:
        raise LengthMismatch(f"{mat.shape[0]} distributions vs {golds.shape[0]} golds")
    if mat.shape[0] < 2:
        raise EmptyInput("calibrated log-likelihood needs at least 2 items")
    nlls: list[float] = []
    temps: list[float] = []
    for split in range(cfg.n_splits):
        rng = np.random.default_rng((cfg.seed, split))
        order = rng.permutation(mat.shape[0])
        half = mat.shape[0] // 2
        val, test = order[:half], order[half:]
        t = fit_cll_temperature(mat[val], golds[val], cfg)
        scaled = _scale_probs(mat[test], t)
        nlls.append(nll(scaled, golds[test]))
        temps.append(t)
    return float(np.mean([-v for v in nlls])), nlls, temps


def evaluate(
    probs: Sequence[Categorical] | np.ndarray,
    golds: Sequence[int],
    cfg: CllConfig = CllConfig(),
) -> EvalReport:
    """Macro-F1 of the argmax predictions plus the calibrated log-likelihood."""
    mat = _probs_matrix(probs)
    golds_arr = np.asarray(golds, dtype=np.int64)
    preds = np.argmax(mat, axis=1)
    cll, nlls, temps = _cll_detail(mat, golds_arr, cfg)
    return EvalReport(
        macro_f1=macro_f1(preds, golds_arr, n_classes=mat.shape[1]),
        cll=cll,
        split_nlls=tuple(nlls),
        split_temperatures=tuple(temps),
    )


def write_report_json(report: EvalReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")


def write_splits_csv(report: EvalReport, path: str | Path) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["split", "temperature", "nll"])
        for i, (t, v) in enumerate(zip(report.split_temperatures, report.split_nlls)):
            writer.writerow([i, repr(float(t)), repr(float(v))])


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"series of shape {x.shape} vs {y.shape}")
    if x.size < 2:
        raise LengthMismatch("correlation needs at least 2 points")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float(np.sqrt(np.sum(dx * dx)))
    sy = float(np.sqrt(np.sum(dy * dy)))
    if sx == 0.0 or sy == 0.0:
        raise ConstantSeries("correlation of a constant series is undefined")
    r = float(np.sum(dx * dy) / (sx * sy))
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True, eq=False)
class HubAnalysis:
    """Per method: mean JSD to the aggregate and mean JSD to the other members."""

    method_names: tuple[str, ...]
    to_aggregate: np.ndarray  # (M,)
    to_others: np.ndarray  # (M,)


def hub_analysis(e: Ensemble, aggregate: Sequence[Categorical]) -> HubAnalysis:
    """Distances feeding the hub correlation: for each method m, the mean
    over items of JSD(aggregate ‖ p_m) and the mean over the other methods
    of the item-averaged JSD(p_m ‖ p_k)."""
    if len(aggregate) != e.n_items:
        raise DimensionMismatch(f"{len(aggregate)} aggregates for {e.n_items} items")
    agg = np.stack([a.probs for a in aggregate])
    if agg.shape[1] != e.k:
        raise DimensionMismatch(f"aggregate over {agg.shape[1]} classes, ensemble over {e.k}")
    to_agg = np.zeros(e.m)
    pair = np.zeros((e.m, e.m))
    for i in range(e.n_items):
        for mi in range(e.m):
            to_agg[mi] += _jsd_arr(agg[i], e.probs[mi, i])
            for mj in range(mi + 1, e.m):
                d = _jsd_arr(e.probs[mi, i], e.probs[mj, i])
                pair[mi, mj] += d
                pair[mj, mi] += d
    to_agg /= e.n_items
    pair /= e.n_items
    to_others = pair.sum(axis=1) / (e.m - 1) if e.m > 1 else np.zeros(e.m)
    return HubAnalysis(method_names=e.method_names, to_aggregate=to_agg, to_others=to_others)
