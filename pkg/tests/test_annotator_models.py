import numpy as np
import pytest

from crowd_centroid.annotations import Annotation, AnnotationSet, LabelSpace
from crowd_centroid.annotator_models import (
    DawidSkeneModel,
    EmConfig,
    _Indexed,
    _ds_e_step,
    _fit_ds_restart,
    _fit_mace_restart,
    fit_dawid_skene,
    fit_mace,
    load_model,
    log_likelihood,
    model_from_dict,
    model_to_dict,
    save_model,
)
from crowd_centroid.distributions import Categorical
from crowd_centroid.errors import ConfigError, DegenerateInput, LabelSpaceMismatch
from crowd_centroid.simulate import AnnotatorProfile, SimConfig, generate_crowd


def build_set(records, labels=("a", "b")):
    return AnnotationSet(
        records=tuple(Annotation(*r) for r in records), label_space=LabelSpace(labels)
    )


def unanimous_set(n_items=8, n_annotators=4, k=3):
    recs = []
    for i in range(n_items):
        for a in range(n_annotators):
            recs.append((f"i{i:02d}", f"a{a}", i % k))
    return build_set(recs, labels=tuple("xyz"[:k]))


def random_set(seed, n_items=15, n_annotators=6, k=3, per_item=4):
    rng = np.random.default_rng(seed)
    recs = []
    for i in range(n_items):
        for a in rng.choice(n_annotators, size=per_item, replace=False):
            recs.append((f"i{i:02d}", f"a{a}", int(rng.integers(0, k))))
    return build_set(recs, labels=tuple("pqr"[:k]))


def trace_is_monotone(trace, slack=1e-9):
    return all(b >= a - slack for a, b in zip(trace, trace[1:]))


def competence_by_profile(model, n):
    pos = {a: i for i, a in enumerate(model.annotator_ids)}
    return np.array([model.competence[pos[f"ann{j:03d}"]] for j in range(n)])


# ---------------------------------------------------------------------------
# confusion-matrix model
# ---------------------------------------------------------------------------

def test_ds_unanimous_items_get_confident_posteriors():
    model = fit_dawid_skene(unanimous_set(), EmConfig(seed=0))
    assert np.all(model.posteriors.max(axis=1) >= 0.99)


def test_ds_single_annotator_single_item_one_step_oracle():
    """Replays the documented first M/E step by hand: warm-start
    responsibility [0, 1], 0.01 pseudo-counts, posterior from
    prior * confusion column of the observed label."""
    a = build_set([("i0", "a0", 1)])
    s = 0.01
    resp = np.array([0.0, 1.0])
    prior = (resp + s) / (1.0 + 2 * s)
    counts = np.array([[0.0, 0.0], [0.0, 1.0]]) + s  # C[k, l] = resp[k] * 1{l=1}
    conf = counts / counts.sum(axis=1, keepdims=True)
    unnorm = prior * conf[:, 1]
    expected_post = unnorm / unnorm.sum()
    expected_ll = float(np.log(unnorm.sum()))

    model = fit_dawid_skene(a, EmConfig(max_iters=1, restarts=1, seed=0))
    assert model.class_prior.probs == pytest.approx(prior, abs=1e-15)
    assert model.confusion[0] == pytest.approx(conf, abs=1e-15)
    assert model.posteriors[0] == pytest.approx(expected_post, abs=1e-12)
    assert model.log_likelihood_trace[-1] == pytest.approx(expected_ll, abs=1e-12)
    assert int(np.argmax(model.posteriors[0])) == 1  # mode on the observed label


def test_ds_recovers_simulated_truth():
    cfg = SimConfig(
        n_items=200,
        class_prior=Categorical([1 / 3, 1 / 3, 1 / 3]),
        profiles=tuple(AnnotatorProfile.diagonal(3, 0.85) for _ in range(10)),
        annotations_per_item=5,
        seed=7,
    )
    ann, truth = generate_crowd(cfg)
    model = fit_dawid_skene(ann, EmConfig(seed=7))
    accuracy = float(np.mean(np.argmax(model.posteriors, axis=1) == truth))
    assert accuracy >= 0.90
    assert trace_is_monotone(model.log_likelihood_trace)


def test_ds_trace_monotone_on_random_sets():
    for seed in range(6):
        model = fit_dawid_skene(random_set(seed), EmConfig(seed=seed, restarts=2))
        assert trace_is_monotone(model.log_likelihood_trace)
        assert np.all(np.abs(model.posteriors.sum(axis=1) - 1.0) <= 1e-9)


def test_ds_determinism_bit_identical():
    a = random_set(3)
    cfg = EmConfig(seed=9)
    m1 = fit_dawid_skene(a, cfg)
    m2 = fit_dawid_skene(a, cfg)
    assert np.array_equal(m1.posteriors, m2.posteriors)
    assert np.array_equal(m1.confusion, m2.confusion)
    assert m1.log_likelihood_trace == m2.log_likelihood_trace


def test_ds_degenerate_input_detected():
    # zero-probability parameters make the single item impossible under
    # every true class
    a = build_set([("i0", "a0", 0)])
    idx = _Indexed(a)
    prior = np.array([1.0, 0.0])
    confusion = np.array([[[0.0, 1.0], [1.0, 0.0]]])
    with pytest.raises(DegenerateInput):
        _ds_e_step(idx, (prior, confusion))


# ---------------------------------------------------------------------------
# competence/spam model
# ---------------------------------------------------------------------------

def test_mace_agreement_yields_high_competence():
    model = fit_mace(unanimous_set(n_items=12), EmConfig(seed=0))
    assert np.all(model.competence >= 0.9)


def test_mace_separates_spammers():
    cfg = SimConfig(
        n_items=200,
        class_prior=Categorical([1 / 3, 1 / 3, 1 / 3]),
        profiles=tuple(
            [AnnotatorProfile.faithful(3, 0.9) for _ in range(7)]
            + [AnnotatorProfile.spammer([1 / 3] * 3) for _ in range(3)]
        ),
        annotations_per_item=5,
        seed=11,
    )
    ann, _ = generate_crowd(cfg)
    model = fit_mace(ann, EmConfig(seed=11))
    comp = competence_by_profile(model, 10)
    assert comp[:7].mean() - comp[7:].mean() >= 0.3
    assert trace_is_monotone(model.log_likelihood_trace)


def test_mace_flags_constant_label_annotator():
    cfg = SimConfig(
        n_items=150,
        class_prior=Categorical([1 / 3, 1 / 3, 1 / 3]),
        profiles=tuple(
            [AnnotatorProfile.faithful(3, 0.9) for _ in range(9)]
            + [AnnotatorProfile.spammer([1.0, 0.0, 0.0])]
        ),
        annotations_per_item=5,
        seed=3,
    )
    ann, _ = generate_crowd(cfg)
    model = fit_mace(ann, EmConfig(seed=3))
    comp = competence_by_profile(model, 10)
    assert comp[9] < np.median(comp)


def test_mace_trace_monotone_on_random_sets():
    for seed in range(6):
        model = fit_mace(random_set(seed), EmConfig(seed=seed, restarts=2))
        assert trace_is_monotone(model.log_likelihood_trace)
        assert np.all(np.abs(model.posteriors.sum(axis=1) - 1.0) <= 1e-9)
        assert np.all((model.competence >= 0) & (model.competence <= 1))


def test_mace_determinism_bit_identical():
    a = random_set(4)
    cfg = EmConfig(seed=2)
    m1 = fit_mace(a, cfg)
    m2 = fit_mace(a, cfg)
    assert np.array_equal(m1.posteriors, m2.posteriors)
    assert np.array_equal(m1.competence, m2.competence)
    assert np.array_equal(m1.spam_dist, m2.spam_dist)


# ---------------------------------------------------------------------------
# log-likelihood
# ---------------------------------------------------------------------------

def test_log_likelihood_equals_final_trace_entry():
    a = random_set(8)
    for model in (fit_dawid_skene(a, EmConfig(seed=1)), fit_mace(a, EmConfig(seed=1))):
        assert log_likelihood(model, a) == model.log_likelihood_trace[-1]


def test_log_likelihood_finite_with_smoothing():
    a = build_set([("i0", "a0", 0), ("i0", "a1", 1), ("i1", "a0", 1), ("i1", "a1", 0)])
    for model in (fit_dawid_skene(a, EmConfig(seed=0)), fit_mace(a, EmConfig(seed=0))):
        assert np.isfinite(log_likelihood(model, a))


def test_best_restart_wins():
    a = random_set(12, n_items=20)
    cfg = EmConfig(seed=5, restarts=5)
    best_ds = fit_dawid_skene(a, cfg)
    singles = [_fit_ds_restart(a, cfg, r).log_likelihood_trace[-1] for r in range(5)]
    assert best_ds.log_likelihood_trace[-1] == max(singles)
    best_mace = fit_mace(a, cfg)
    singles = [_fit_mace_restart(a, cfg, r).log_likelihood_trace[-1] for r in range(5)]
    assert best_mace.log_likelihood_trace[-1] == max(singles)


def test_log_likelihood_label_space_mismatch():
    a = random_set(1)
    model = fit_dawid_skene(a, EmConfig(seed=0, restarts=1))
    other = build_set([("i0", "a0", 0), ("i1", "a1", 1)], labels=("u", "v"))
    with pytest.raises(LabelSpaceMismatch):
        log_likelihood(model, other)
    stranger = build_set(
        [("i0", "zz", 0), ("i1", "zz", 1), ("i0", "a0", 1)], labels=("p", "q", "r")
    )
    with pytest.raises(LabelSpaceMismatch):
        log_likelihood(model, stranger)


# ---------------------------------------------------------------------------
# label-permutation equivariance
# ---------------------------------------------------------------------------

def permute_labels(a: AnnotationSet, sigma) -> AnnotationSet:
    recs = tuple(
        Annotation(r.item_id, r.annotator_id, int(sigma[r.label_index])) for r in a.records
    )
    return AnnotationSet(records=recs, label_space=a.label_space)


@pytest.mark.parametrize("fit", [fit_dawid_skene, fit_mace])
def test_label_permutation_equivariance(fit):
    sigma = np.array([2, 0, 1])
    a = random_set(42, n_items=20)
    cfg = EmConfig(seed=7, restarts=3)
    base = fit(a, cfg)
    perm = fit(permute_labels(a, sigma), cfg)
    assert np.allclose(perm.posteriors[:, sigma], base.posteriors, atol=1e-7)
    if isinstance(base, DawidSkeneModel):
        assert np.allclose(perm.class_prior.probs[sigma], base.class_prior.probs, atol=1e-7)
        assert np.allclose(
            perm.confusion[:, sigma][:, :, sigma], base.confusion, atol=1e-7
        )
    else:
        assert np.allclose(perm.competence, base.competence, atol=1e-7)
        assert np.allclose(perm.spam_dist[:, sigma], base.spam_dist, atol=1e-7)


# ---------------------------------------------------------------------------
# config validation and serialization
# ---------------------------------------------------------------------------

def test_em_config_validation():
    with pytest.raises(ConfigError):
        EmConfig(max_iters=0)
    with pytest.raises(ConfigError):
        EmConfig(tol=0)
    with pytest.raises(ConfigError):
        EmConfig(smoothing=-1)
    with pytest.raises(ConfigError):
        EmConfig(restarts=0)


@pytest.mark.parametrize("fit", [fit_dawid_skene, fit_mace])
def test_model_serialization_round_trip(fit, tmp_path):
    a = random_set(6)
    model = fit(a, EmConfig(seed=3, restarts=2))
    path = tmp_path / "model.json"
    save_model(model, path)
    back = load_model(path)
    assert type(back) is type(model)
    assert back.label_space.labels == model.label_space.labels
    assert np.allclose(back.posteriors, model.posteriors, atol=0)
    assert back.log_likelihood_trace == model.log_likelihood_trace
    if isinstance(model, DawidSkeneModel):
        assert np.allclose(back.confusion, model.confusion, atol=0)
    else:
        assert np.allclose(back.competence, model.competence, atol=0)
        assert np.allclose(back.spam_dist, model.spam_dist, atol=0)
    assert model_to_dict(model_from_dict(model_to_dict(model))) == model_to_dict(model)
