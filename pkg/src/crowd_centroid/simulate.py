"""Synthetic crowd generator with known ground truth.

Annotators are either confusion-matrix labelers (row = true class, column =
emitted label) or spammers that ignore the truth and draw from a fixed
distribution. Generation consumes a single seeded PCG64 stream in item
order, so identical configs reproduce identical crowds byte for byte; the
algorithm identifier is recorded alongside outputs so the stream can be
reproduced elsewhere.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .annotations import Annotation, AnnotationSet, LabelSpace
from .distributions import Categorical
from .errors import ConfigError, CrowdCentroidError

RNG_ALGORITHM = "numpy-pcg64"

TRUTH_HEADER = ("item_id", "label")


@dataclass(frozen=True, eq=False)
class AnnotatorProfile:
    """Emission behavior of one simulated annotator.

    ``kind`` is "confusion" or "spammer"; either way the behavior is stored
    as a K x K row-stochastic emission matrix (a spammer's rows are all the
    same spam distribution).
    """

    kind: str
    emission: np.ndarray

    def __post_init__(self):
        if self.kind not in ("confusion", "spammer"):
            raise ConfigError(f"profile kind must be 'confusion' or 'spammer', got {self.kind!r}")
        m = np.array(self.emission, dtype=np.float64, copy=True)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 2:
            raise ConfigError(f"emission matrix must be square K x K with K >= 2, got {m.shape}")
        for row in m:
            try:
                Categorical(row)  # validates non-negativity and row sum
            except (ValueError, CrowdCentroidError) as exc:
                raise ConfigError(f"emission row {row} is not a distribution: {exc}") from exc
        m.flags.writeable = False
        object.__setattr__(self, "emission", m)

    @property
    def k(self) -> int:
        return self.emission.shape[0]

    @classmethod
    def confusion(cls, matrix) -> "AnnotatorProfile":
        return cls(kind="confusion", emission=np.asarray(matrix, dtype=np.float64))

    @classmethod
    def spammer(cls, dist) -> "AnnotatorProfile":
        d = np.asarray(dist, dtype=np.float64)
        return cls(kind="spammer", emission=np.tile(d, (d.shape[0], 1)))

    @classmethod
    def diagonal(cls, k: int, diag: float) -> "AnnotatorProfile":
        """Confusion matrix with ``diag`` on the diagonal, rest spread evenly."""
        if not 0.0 <= diag <= 1.0:
            raise ConfigError(f"diagonal weight must be in [0, 1], got {diag}")
        off = (1.0 - diag) / (k - 1)
        m = np.full((k, k), off)
        np.fill_diagonal(m, diag)
        return cls(kind="confusion", emission=m)

    @classmethod
    def faithful(cls, k: int, competence: float, spam_dist=None) -> "AnnotatorProfile":
        """Annotator that answers truthfully with probability ``competence``
        and otherwise draws from ``spam_dist`` (uniform by default)."""
        if not 0.0 <= competence <= 1.0:
            raise ConfigError(f"competence must be in [0, 1], got {competence}")
        spam = np.full(k, 1.0 / k) if spam_dist is None else np.asarray(spam_dist, dtype=np.float64)
        m = competence * np.eye(k) + (1.0 - competence) * np.tile(spam, (k, 1))
        return cls(kind="confusion", emission=m)


@dataclass(frozen=True, eq=False)
class SimConfig:
    n_items: int
    class_prior: Categorical
    profiles: tuple[AnnotatorProfile, ...]
    annotations_per_item: int
    seed: int
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "profiles", tuple(self.profiles))
        if self.n_items < 1:
            raise ConfigError(f"n_items must be >= 1, got {self.n_items}")
        if not self.profiles:
            raise ConfigError("at least one annotator profile required")
        k = self.class_prior.k
        for p in self.profiles:
            if p.k != k:
                raise ConfigError(f"profile over {p.k} classes does not match prior over {k}")
        if not 1 <= self.annotations_per_item <= len(self.profiles):
            raise ConfigError(
                f"annotations_per_item must be in [1, {len(self.profiles)}], "
                f"got {self.annotations_per_item}"
            )
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
            if len(self.labels) != k:
                raise ConfigError(f"{len(self.labels)} label names for {k} classes")

    @property
    def k(self) -> int:
        return self.class_prior.k


def default_labels(k: int) -> tuple[str, ...]:
    # zero-padded so lexicographic order equals index order when reloaded
    return tuple(f"c{i:02d}" for i in range(k))


def generate_crowd(cfg: SimConfig) -> tuple[AnnotationSet, np.ndarray]:
    """Sample true labels from the class prior, then per item draw a random
    annotator subset (without replacement) and one label per annotator from
    their emission row. Returns the annotation set and the true label indices.
    """
    labels = cfg.labels if cfg.labels is not None else default_labels(cfg.k)
    space = LabelSpace(labels)
    rng = np.random.default_rng(cfg.seed)
    n_annotators = len(cfg.profiles)
    annotator_ids = [f"ann{j:03d}" for j in range(n_annotators)]

    records: list[Annotation] = []
    truth = np.empty(cfg.n_items, dtype=np.int64)
    for i in range(cfg.n_items):
        item_id = f"item{i:05d}"
        t = int(rng.choice(cfg.k, p=cfg.class_prior.probs))
        truth[i] = t
        chosen = rng.choice(n_annotators, size=cfg.annotations_per_item, replace=False)
        for j in chosen:
            emitted = int(rng.choice(cfg.k, p=cfg.profiles[j].emission[t]))
            records.append(Annotation(item_id, annotator_ids[int(j)], emitted))
    truth.flags.writeable = False
    return AnnotationSet(records=tuple(records), label_space=space), truth


def write_annotations_csv(a: AnnotationSet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["item_id", "annotator_id", "label"])
        for rec in a.records:
            writer.writerow([rec.item_id, rec.annotator_id, a.label_space.labels[rec.label_index]])


def write_truth_csv(
    item_ids: Sequence[str],
    truth: np.ndarray,
    label_space: LabelSpace,
    path: str | Path,
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(TRUTH_HEADER))
        for item_id, t in zip(item_ids, truth):
            writer.writerow([item_id, label_space.labels[int(t)]])


def load_truth_csv(path: str | Path, label_space: LabelSpace) -> tuple[tuple[str, ...], np.ndarray]:
    from .errors import EmptyInput, ParseError

    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInput(f"truth CSV {path} is empty") from None
        if tuple(h.strip() for h in header) != TRUTH_HEADER:
            raise ParseError(f"expected header {','.join(TRUTH_HEADER)!r}, got {','.join(header)!r}")
        items: list[str] = []
        labels: list[int] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"line {lineno}: expected 2 fields, got {len(row)}")
            items.append(row[0])
            labels.append(label_space.index(row[1]))
    if not items:
        raise EmptyInput(f"truth CSV {path} has no data rows")
    return tuple(items), np.asarray(labels, dtype=np.int64)
