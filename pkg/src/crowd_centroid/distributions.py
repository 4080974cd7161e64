"""Categorical distributions, divergences, and natural-parameter machinery.

Everything downstream trades in categorical distributions over a fixed set
of K classes. This module provides the three coordinate systems the toolkit
moves between and the divergences defined on them:

* probabilities ``p`` on the simplex (:class:`Categorical`),
* the interior parameterization ``theta = p[:K-1]`` (:class:`NaturalParams`),
  the coordinates in which the centroid solver's convex potential lives,
* log-probabilities / logits (:class:`LogProbs`) for temperature scaling.

Divergences use natural logarithms throughout, so

    KLD(P‖Q) = sum_j P_j ln(P_j / Q_j)                      (0·ln 0 := 0)
    JS(P‖Q)  = ½ KLD(P‖S) + ½ KLD(Q‖S),  S = ½(P + Q)

with 0 <= JS <= ln 2. The convex potential on theta-coordinates is the
negative entropy

    F(theta) = sum_k theta_k ln theta_k + r ln r,  r = 1 - sum_k theta_k

whose gradient map eta_k = ln(theta_k / r) and its inverse
theta_k = e^eta_k / (1 + sum_j e^eta_j) form the bijection the fixed-point
centroid update is written in. All functions are pure; values are immutable
and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    AbsoluteContinuityViolation,
    BoundaryDistribution,
    DimensionMismatch,
)

# Interior clamp: probabilities below this are lifted before any log.
INTERIOR_EPS = 1e-12

# Beyond this length, plain np.sum loses enough bits to threaten the
# 1e-10 agreement between the probability- and theta-space divergences.
_FSUM_THRESHOLD = 64


def _sum(terms: np.ndarray) -> float:
    if terms.size > _FSUM_THRESHOLD:
        return math.fsum(terms)
    return float(np.sum(terms))


@dataclass(frozen=True, eq=False)
class Categorical:
    """A probability vector over K >= 2 classes.

    Entries are non-negative and sum to 1 within 1e-9. The array is copied
    and frozen on construction.
    """

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64, copy=True)
        if p.ndim != 1 or p.shape[0] < 2:
            raise DimensionMismatch(
                f"categorical needs a 1-d vector of K >= 2 probabilities, got shape {p.shape}"
            )
        if not np.all(np.isfinite(p)):
            raise ValueError("categorical probabilities must be finite")
        if np.any(p < 0):
            raise ValueError(f"negative probability in {p}")
        total = _sum(p)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)

    @property
    def k(self) -> int:
        return self.probs.shape[0]

    @classmethod
    def uniform(cls, k: int) -> "Categorical":
        return cls(np.full(k, 1.0 / k))


@dataclass(frozen=True, eq=False)
class NaturalParams:
    """First K-1 probabilities of an interior categorical distribution.

    All entries strictly positive with a strictly positive remainder
    1 - sum(theta); the open-simplex constraint keeps every log term in the
    potential finite.
    """

    theta: np.ndarray

    def __post_init__(self):
        t = np.array(self.theta, dtype=np.float64, copy=True)
        if t.ndim != 1 or t.shape[0] < 1:
            raise DimensionMismatch(
                f"natural parameters need a 1-d vector of K-1 >= 1 entries, got shape {t.shape}"
            )
        if not np.all(np.isfinite(t)):
            raise ValueError("natural parameters must be finite")
        if np.any(t <= 0) or _sum(t) >= 1.0:
            raise BoundaryDistribution(
                f"natural parameters must lie in the open simplex interior, got {t}"
            )
        t.flags.writeable = False
        object.__setattr__(self, "theta", t)

    @property
    def dim(self) -> int:
        return self.theta.shape[0]


@dataclass(frozen=True, eq=False)
class LogProbs:
    """Natural-log probabilities, possibly unnormalized."""

    logits: np.ndarray

    def __post_init__(self):
        l = np.array(self.logits, dtype=np.float64, copy=True)
        if l.ndim != 1 or l.shape[0] < 2:
            raise DimensionMismatch(f"logits need a 1-d vector of K >= 2 entries, got shape {l.shape}")
        if not np.all(np.isfinite(l)):
            raise ValueError("logits must be finite")
        l.flags.writeable = False
        object.__setattr__(self, "logits", l)


# ---------------------------------------------------------------------------
# Array-level kernels. Internal: inputs assumed validated/aligned.
# ---------------------------------------------------------------------------

def _kld_arr(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    if np.any(q[mask] == 0):
        raise AbsoluteContinuityViolation(
            "KLD(p‖q) undefined: q has zero mass where p does not"
        )
    pm = p[mask]
    terms = pm * (np.log(pm) - np.log(q[mask]))
    return max(_sum(terms), 0.0)


def _jsd_arr(p: np.ndarray, q: np.ndarray) -> float:
    s = 0.5 * (p + q)
    # s vanishes only where both p and q do, so absolute continuity holds.
    return max(0.5 * _kld_arr(p, s) + 0.5 * _kld_arr(q, s), 0.0)


def _softmax_arr(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - np.max(x))
    return z / np.sum(z)


def _clamp_arr(p: np.ndarray, eps: float) -> np.ndarray:
    c = np.maximum(p, eps)
    return c / _sum(c)


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def kld(p: Categorical, q: Categorical) -> float:
    """Kullback-Leibler divergence KLD(p‖q) in nats.

    Raises :class:`AbsoluteContinuityViolation` when q_j = 0 at some j with
    p_j > 0; an error rather than +inf so downstream optimizers never see
    infinities.
    """
    if p.k != q.k:
        raise DimensionMismatch(f"KLD over different class counts: {p.k} vs {q.k}")
    return _kld_arr(p.probs, q.probs)


def jsd(p: Categorical, q: Categorical) -> float:
    """Jensen-Shannon divergence in nats; symmetric, bounded by ln 2."""
    if p.k != q.k:
        raise DimensionMismatch(f"JSD over different class counts: {p.k} vs {q.k}")
    return _jsd_arr(p.probs, q.probs)


def neg_entropy(theta: NaturalParams) -> float:
    """Convex potential F(theta): the negative Shannon entropy in nats."""
    t = theta.theta
    rest = 1.0 - _sum(t)
    terms = t * np.log(t)
    return _sum(terms) + rest * math.log(rest)


def grad_neg_entropy(theta: NaturalParams) -> np.ndarray:
    """Gradient map of F: eta_k = ln(theta_k / (1 - sum theta))."""
    t = theta.theta
    rest = 1.0 - _sum(t)
    return np.log(t) - math.log(rest)


def inv_grad_neg_entropy(eta: np.ndarray) -> NaturalParams:
    """Inverse gradient map: theta_k = e^eta_k / (1 + sum_j e^eta_j).

    Max-shifted so arbitrarily large eta never overflows; the implicit
    K-th coordinate carries eta = 0. Spreads in eta so wide that some
    coordinate underflows to an exact zero fall back to the interior clamp.
    """
    eta = np.asarray(eta, dtype=np.float64)
    shift = max(float(np.max(eta)), 0.0)
    z = np.exp(eta - shift)
    denom = math.exp(-shift) + _sum(z)
    theta = z / denom
    if np.any(theta <= 0.0) or _sum(theta) >= 1.0:
        full = _clamp_arr(np.concatenate([z, [math.exp(-shift)]]), INTERIOR_EPS)
        theta = full[:-1]
    return NaturalParams(theta)


def to_natural(p: Categorical, eps: float = INTERIOR_EPS) -> NaturalParams:
    """Drop the last coordinate after clamping to the simplex interior.

    Probabilities below ``eps`` are lifted to ``eps`` and the vector is
    renormalized, so boundary distributions (exact zeros from vote
    normalization) map to valid interior points.
    """
    c = _clamp_arr(p.probs, eps)
    theta = c[:-1]
    if np.any(theta <= 0) or _sum(theta) >= 1.0:
        raise BoundaryDistribution(
            f"distribution {p.probs} not interior after clamping at eps={eps}"
        )
    return NaturalParams(theta)


def from_natural(theta: NaturalParams) -> Categorical:
    """Append the remainder coordinate 1 - sum(theta)."""
    t = theta.theta
    return Categorical(np.concatenate([t, [1.0 - _sum(t)]]))


def jsd_natural(t1: NaturalParams, t2: NaturalParams) -> float:
    """JSD expressed through the potential: (F(t1)+F(t2))/2 - F((t1+t2)/2).

    The theta midpoint is exactly the probability-space mixture, so this
    agrees with :func:`jsd` on the corresponding distributions to ~1e-10.
    """
    if t1.dim != t2.dim:
        raise DimensionMismatch(f"natural parameters of dim {t1.dim} vs {t2.dim}")
    mid = NaturalParams(0.5 * (t1.theta + t2.theta))
    val = 0.5 * (neg_entropy(t1) + neg_entropy(t2)) - neg_entropy(mid)
    return max(val, 0.0)


def softmax(l: LogProbs) -> Categorical:
    """Normalize logits to a distribution; invariant to constant shifts."""
    return Categorical(_softmax_arr(l.logits))


def clamp_interior(p: Categorical, eps: float = INTERIOR_EPS) -> Categorical:
    """Lift entries below ``eps`` to ``eps`` and renormalize."""
    return Categorical(_clamp_arr(p.probs, eps))


def to_log_probs(p: Categorical, eps: float = INTERIOR_EPS) -> LogProbs:
    """Log of the interior-clamped probabilities."""
    return LogProbs(np.log(_clamp_arr(p.probs, eps)))
