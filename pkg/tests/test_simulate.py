import numpy as np
import pytest

from crowd_centroid.annotations import load_annotations, vote_counts
from crowd_centroid.distributions import Categorical
from crowd_centroid.errors import ConfigError
from crowd_centroid.simulate import (
    AnnotatorProfile,
    SimConfig,
    generate_crowd,
    write_annotations_csv,
    write_truth_csv,
    load_truth_csv,
)


def sim(n_items=50, profiles=None, per_item=3, seed=0, prior=(0.5, 0.5)):
    profiles = profiles or tuple(AnnotatorProfile.diagonal(len(prior), 0.9) for _ in range(5))
    return SimConfig(
        n_items=n_items,
        class_prior=Categorical(list(prior)),
        profiles=profiles,
        annotations_per_item=per_item,
        seed=seed,
    )


def test_identity_confusion_reproduces_truth():
    profiles = tuple(AnnotatorProfile.confusion(np.eye(3)) for _ in range(4))
    cfg = sim(profiles=profiles, prior=(0.3, 0.3, 0.4), per_item=2, seed=11)
    ann, truth = generate_crowd(cfg)
    truth_by_item = dict(zip(ann.item_ids, truth))
    for rec in ann.records:
        assert rec.label_index == truth_by_item[rec.item_id]


def test_determinism():
    a1, t1 = generate_crowd(sim(seed=123))
    a2, t2 = generate_crowd(sim(seed=123))
    assert a1.records == a2.records
    assert np.array_equal(t1, t2)


def test_different_seeds_differ():
    a1, _ = generate_crowd(sim(seed=1))
    a2, _ = generate_crowd(sim(seed=2))
    assert a1.records != a2.records


def test_spammer_label_frequencies():
    # one spammer labeling every item; 10000 annotations
    cfg = SimConfig(
        n_items=10000,
        class_prior=Categorical([0.9, 0.1]),
        profiles=(AnnotatorProfile.spammer([0.5, 0.5]),),
        annotations_per_item=1,
        seed=77,
    )
    ann, _ = generate_crowd(cfg)
    counts = np.bincount([r.label_index for r in ann.records], minlength=2)
    freqs = counts / counts.sum()
    assert np.max(np.abs(freqs - 0.5)) < 0.02


def test_empirical_confusion_converges_to_profile():
    matrix = np.array([[0.7, 0.2, 0.1], [0.1, 0.8, 0.1], [0.25, 0.25, 0.5]])
    cfg = SimConfig(
        n_items=10000,
        class_prior=Categorical([1 / 3, 1 / 3, 1 / 3]),
        profiles=(AnnotatorProfile.confusion(matrix),),
        annotations_per_item=1,
        seed=13,
    )
    ann, truth = generate_crowd(cfg)
    emp = np.zeros((3, 3))
    truth_by_item = dict(zip(ann.item_ids, truth))
    for rec in ann.records:
        emp[truth_by_item[rec.item_id], rec.label_index] += 1
    emp /= emp.sum(axis=1, keepdims=True)
    assert np.max(np.abs(emp - matrix)) < 0.03


def test_output_satisfies_annotation_invariants():
    ann, truth = generate_crowd(sim(n_items=40, per_item=4, seed=5))
    # construction already validates; spot-check alignment and counts
    assert ann.n_items == 40 == len(truth)
    c = vote_counts(ann)
    assert np.all(c.counts.sum(axis=1) == 4)


def test_annotations_per_item_bounds():
    with pytest.raises(ConfigError):
        sim(per_item=9)  # only 5 profiles
    with pytest.raises(ConfigError):
        sim(per_item=0)


def test_profile_validation():
    with pytest.raises(ConfigError):
        AnnotatorProfile.confusion([[0.5, 0.6], [0.5, 0.5]])
    with pytest.raises(ConfigError):
        AnnotatorProfile.diagonal(3, 1.5)
    faithful = AnnotatorProfile.faithful(3, 0.9)
    assert faithful.emission[0] == pytest.approx([0.9 + 0.1 / 3, 0.1 / 3, 0.1 / 3])


def test_csv_round_trip(tmp_path):
    ann, truth = generate_crowd(sim(n_items=25, seed=3))
    write_annotations_csv(ann, tmp_path / "ann.csv")
    write_truth_csv(ann.item_ids, truth, ann.label_space, tmp_path / "truth.csv")
    back = load_annotations(tmp_path / "ann.csv")
    assert back.records == ann.records
    assert back.label_space.labels == ann.label_space.labels
    items, labels = load_truth_csv(tmp_path / "truth.csv", ann.label_space)
    assert items == ann.item_ids
    assert np.array_equal(labels, truth)
