import math

import numpy as np
import pytest

from crowd_centroid.distributions import (
    Categorical,
    LogProbs,
    NaturalParams,
    clamp_interior,
    from_natural,
    grad_neg_entropy,
    inv_grad_neg_entropy,
    jsd,
    jsd_natural,
    kld,
    neg_entropy,
    softmax,
    to_log_probs,
    to_natural,
)
from crowd_centroid.errors import (
    AbsoluteContinuityViolation,
    BoundaryDistribution,
    DimensionMismatch,
)

from oracles import jsd_direct

LN2 = math.log(2.0)
LN3 = math.log(3.0)


def rand_cat(rng, k):
    return Categorical(rng.dirichlet(np.ones(k)))


# ---------------------------------------------------------------------------
# type invariants
# ---------------------------------------------------------------------------

def test_categorical_rejects_bad_vectors():
    with pytest.raises(ValueError):
        Categorical([0.5, 0.6])
    with pytest.raises(ValueError):
        Categorical([1.2, -0.2])
    with pytest.raises(DimensionMismatch):
        Categorical([1.0])


def test_categorical_is_immutable():
    p = Categorical([0.3, 0.7])
    with pytest.raises(ValueError):
        p.probs[0] = 0.9


def test_natural_params_must_be_interior():
    with pytest.raises(BoundaryDistribution):
        NaturalParams([0.0])
    with pytest.raises(BoundaryDistribution):
        NaturalParams([0.6, 0.4])
    NaturalParams([0.6, 0.3999])


def test_log_probs_must_be_finite():
    with pytest.raises(ValueError):
        LogProbs([0.0, np.inf])


# ---------------------------------------------------------------------------
# kld
# ---------------------------------------------------------------------------

def test_kld_identity_is_zero():
    p = Categorical([0.3, 0.7])
    assert kld(p, p) == 0.0


def test_kld_single_surviving_term():
    # 1 * log(1 / 0.5); the 0 * log(0 / 0.5) term drops
    assert kld(Categorical([1.0, 0.0]), Categorical([0.5, 0.5])) == pytest.approx(LN2, abs=1e-15)


def test_kld_direct_evaluation():
    got = kld(Categorical([0.5, 0.5]), Categorical([0.25, 0.75]))
    assert got == pytest.approx(0.14384103622589046, abs=1e-15)


def test_kld_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        kld(Categorical([0.5, 0.5]), Categorical([0.2, 0.3, 0.5]))


def test_kld_absolute_continuity():
    with pytest.raises(AbsoluteContinuityViolation):
        kld(Categorical([0.5, 0.5]), Categorical([1.0, 0.0]))


def test_kld_nonnegative_and_zero_iff_equal():
    rng = np.random.default_rng(101)
    for _ in range(300):
        k = int(rng.choice([2, 3, 5, 10]))
        p, q = rand_cat(rng, k), rand_cat(rng, k)
        assert kld(p, q) >= 0.0
        assert kld(p, q) > 0.0  # dirichlet draws never coincide
        assert kld(p, p) == 0.0


# ---------------------------------------------------------------------------
# jsd
# ---------------------------------------------------------------------------

def test_jsd_identity_is_zero():
    rng = np.random.default_rng(7)
    for k in (2, 3, 10):
        p = rand_cat(rng, k)
        assert jsd(p, p) == 0.0


def test_jsd_disjoint_supports_hit_ln2():
    assert jsd(Categorical([1.0, 0.0]), Categorical([0.0, 1.0])) == pytest.approx(LN2, abs=1e-15)


def test_jsd_direct_evaluation():
    got = jsd(Categorical([0.8, 0.2]), Categorical([0.2, 0.8]))
    assert got == pytest.approx(0.19274475702175743, abs=1e-12)


def test_jsd_symmetry_and_bounds():
    rng = np.random.default_rng(11)
    for _ in range(500):
        k = int(rng.choice([2, 3, 5, 10]))
        p, q = rand_cat(rng, k), rand_cat(rng, k)
        a, b = jsd(p, q), jsd(q, p)
        assert abs(a - b) < 1e-12
        assert 0.0 <= a <= LN2 + 1e-12


def test_jsd_matches_entropy_identity_oracle():
    rng = np.random.default_rng(13)
    for _ in range(200):
        k = int(rng.choice([2, 3, 5]))
        p, q = rand_cat(rng, k), rand_cat(rng, k)
        assert jsd(p, q) == pytest.approx(jsd_direct(p.probs, q.probs), abs=1e-12)


# ---------------------------------------------------------------------------
# negative entropy and its gradient pair
# ---------------------------------------------------------------------------

def test_neg_entropy_uniform_binary():
    assert neg_entropy(NaturalParams([0.5])) == pytest.approx(-LN2, abs=1e-15)


def test_neg_entropy_direct_evaluation():
    assert neg_entropy(NaturalParams([0.25])) == pytest.approx(-0.5623351446188084, abs=1e-15)


def test_neg_entropy_uniform_ternary():
    assert neg_entropy(NaturalParams([1 / 3, 1 / 3])) == pytest.approx(-LN3, abs=1e-12)


def test_neg_entropy_minimized_at_uniform():
    rng = np.random.default_rng(17)
    for k in (2, 3, 5, 10):
        uniform = NaturalParams(np.full(k - 1, 1.0 / k))
        assert neg_entropy(uniform) == pytest.approx(-math.log(k), abs=1e-12)
        for _ in range(100):
            theta = to_natural(rand_cat(rng, k))
            assert neg_entropy(theta) >= -math.log(k) - 1e-12


def test_grad_symmetric_point():
    assert grad_neg_entropy(NaturalParams([0.5])) == pytest.approx([0.0], abs=1e-15)


def test_grad_direct_evaluation():
    assert grad_neg_entropy(NaturalParams([0.25])) == pytest.approx([math.log(1 / 3)], abs=1e-12)
    got = grad_neg_entropy(NaturalParams([0.2, 0.3]))
    assert got == pytest.approx([math.log(0.4), math.log(0.6)], abs=1e-12)


def test_inv_grad_symmetric_point():
    assert inv_grad_neg_entropy(np.array([0.0])).theta == pytest.approx([0.5], abs=1e-15)


def test_inv_grad_direct_evaluation():
    got = inv_grad_neg_entropy(np.log([0.4, 0.6]))
    assert got.theta == pytest.approx([0.2, 0.3], abs=1e-12)


def test_inv_grad_survives_huge_eta():
    theta = inv_grad_neg_entropy(np.array([800.0, -5.0]))
    assert np.all(theta.theta > 0) and theta.theta.sum() < 1.0
    assert theta.theta[0] == pytest.approx(1.0, abs=1e-9)


def test_grad_inv_grad_round_trip():
    rng = np.random.default_rng(19)
    for _ in range(1000):
        k = int(rng.choice([2, 3, 5, 10]))
        theta = to_natural(rand_cat(rng, k))
        back = inv_grad_neg_entropy(grad_neg_entropy(theta))
        assert np.max(np.abs(back.theta - theta.theta)) < 1e-12


# ---------------------------------------------------------------------------
# natural-parameter conversions
# ---------------------------------------------------------------------------

def test_to_natural_drops_last_coordinate():
    assert to_natural(Categorical([0.2, 0.3, 0.5])).theta == pytest.approx([0.2, 0.3], abs=1e-12)


def test_from_natural_appends_remainder():
    assert from_natural(NaturalParams([0.2, 0.3])).probs == pytest.approx([0.2, 0.3, 0.5])


def test_natural_round_trip():
    rng = np.random.default_rng(23)
    for _ in range(200):
        k = int(rng.choice([2, 3, 5]))
        p = rand_cat(rng, k)
        back = from_natural(to_natural(p))
        assert np.max(np.abs(back.probs - p.probs)) < 1e-12


def test_to_natural_clamps_boundary_points():
    theta = to_natural(Categorical([1.0, 0.0]))
    assert theta.theta[0] == pytest.approx(1.0, abs=1e-9)
    assert np.all(theta.theta > 0)


# ---------------------------------------------------------------------------
# jsd in natural coordinates
# ---------------------------------------------------------------------------

def test_jsd_natural_identity():
    theta = NaturalParams([0.3, 0.2])
    assert jsd_natural(theta, theta) == 0.0


def test_jsd_natural_matches_probability_space_value():
    t1 = to_natural(Categorical([0.8, 0.2]))
    t2 = to_natural(Categorical([0.2, 0.8]))
    assert jsd_natural(t1, t2) == pytest.approx(0.19274475702175743, abs=1e-10)


def test_jsd_natural_agrees_with_jsd():
    rng = np.random.default_rng(29)
    for _ in range(1000):
        k = int(rng.choice([2, 3, 5, 10]))
        p, q = rand_cat(rng, k), rand_cat(rng, k)
        t1, t2 = to_natural(p), to_natural(q)
        assert abs(jsd_natural(t1, t2) - jsd(from_natural(t1), from_natural(t2))) < 1e-10


def test_jsd_natural_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        jsd_natural(NaturalParams([0.5]), NaturalParams([0.3, 0.3]))


def test_jsd_natural_agreement_holds_for_wide_vectors():
    # K = 200 exercises the compensated-summation path
    rng = np.random.default_rng(67)
    for _ in range(20):
        p, q = rand_cat(rng, 200), rand_cat(rng, 200)
        t1, t2 = to_natural(p), to_natural(q)
        assert abs(jsd_natural(t1, t2) - jsd(from_natural(t1), from_natural(t2))) < 1e-10


# ---------------------------------------------------------------------------
# softmax
# ---------------------------------------------------------------------------

def test_softmax_symmetry():
    assert softmax(LogProbs([0.0, 0.0, 0.0])).probs == pytest.approx([1 / 3] * 3, abs=1e-15)


def test_softmax_shift_invariance_with_ratio():
    for c in (-100.0, 0.0, 7.5, 300.0):
        got = softmax(LogProbs([c, c + LN3]))
        assert got.probs == pytest.approx([0.25, 0.75], abs=1e-12)


def test_softmax_direct_evaluation():
    got = softmax(LogProbs([2.0, 1.0, 0.0]))
    expected = [0.6652409557748219, 0.24472847105479767, 0.09003057317038046]
    assert got.probs == pytest.approx(expected, abs=1e-12)


def test_softmax_shift_invariance_random():
    rng = np.random.default_rng(31)
    for _ in range(200):
        k = int(rng.choice([2, 3, 5, 10]))
        logits = rng.normal(size=k) * 3
        shift = float(rng.normal() * 50)
        a = softmax(LogProbs(logits)).probs
        b = softmax(LogProbs(logits + shift)).probs
        assert np.max(np.abs(a - b)) < 1e-12


# ---------------------------------------------------------------------------
# clamping helpers
# ---------------------------------------------------------------------------

def test_clamp_interior_lifts_zeros():
    p = clamp_interior(Categorical([0.5, 0.5, 0.0]))
    assert np.all(p.probs > 0)
    assert p.probs.sum() == pytest.approx(1.0, abs=1e-15)


def test_to_log_probs_finite_on_boundary():
    l = to_log_probs(Categorical([1.0, 0.0]))
    assert np.all(np.isfinite(l.logits))
