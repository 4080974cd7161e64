"""Annotation data model, CSV ingestion, vote counting, and count-based views.

Input CSV schema (UTF-8, comma-delimited) with the exact header::

    item_id,annotator_id,label

Item order is first-appearance order and is canonical for every per-item
vector downstream. When no explicit label space is given, the label space is
the lexicographically sorted set of distinct labels, which makes vector
order reproducible for identical input.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import IO, NamedTuple, Union

import numpy as np

from .distributions import Categorical, _softmax_arr
from .errors import (
    ConfigError,
    DuplicateAnnotation,
    EmptyInput,
    NoAnnotations,
    ParseError,
    TieError,
    UnknownLabel,
)

logger = logging.getLogger(__name__)

Source = Union[str, Path, IO[str], IO[bytes]]

CSV_HEADER = ("item_id", "annotator_id", "label")

TIE_RULES = ("lowest_index", "error", "seeded_random")


@dataclass(frozen=True)
class LabelSpace:
    """Ordered set of K >= 2 distinct label names; order is canonical."""

    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.labels) < 2:
            raise ConfigError(f"label space needs at least 2 labels, got {list(self.labels)}")
        if len(set(self.labels)) != len(self.labels):
            raise ConfigError(f"duplicate labels in label space {list(self.labels)}")

    @property
    def k(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise UnknownLabel(f"label {label!r} not in label space {list(self.labels)}") from None


class Annotation(NamedTuple):
    item_id: str
    annotator_id: str
    label_index: int


@dataclass(frozen=True, eq=False)
class AnnotationSet:
    """Sparse (item, annotator, label) records over a fixed label space.

    At most one record per (item, annotator) pair; every item named in
    ``records`` has at least one record by construction.
    """

    records: tuple[Annotation, ...]
    label_space: LabelSpace

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if not self.records:
            raise EmptyInput("annotation set has no records")
        k = self.label_space.k
        seen: set[tuple[str, str]] = set()
        for rec in self.records:
            if not 0 <= rec.label_index < k:
                raise ConfigError(f"label index {rec.label_index} outside [0, {k}) in {rec}")
            key = (rec.item_id, rec.annotator_id)
            if key in seen:
                raise DuplicateAnnotation(
                    f"annotator {rec.annotator_id!r} labeled item {rec.item_id!r} more than once"
                )
            seen.add(key)

    @cached_property
    def item_ids(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(r.item_id for r in self.records))

    @cached_property
    def annotator_ids(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(r.annotator_id for r in self.records))

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_annotators(self) -> int:
        return len(self.annotator_ids)


@dataclass(frozen=True, eq=False)
class VoteCounts:
    """Per item, the number of votes each label received."""

    item_ids: tuple[str, ...]
    counts: np.ndarray  # (n_items, K) non-negative integers
    label_space: LabelSpace

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64, copy=True)
        if c.ndim != 2 or c.shape != (len(self.item_ids), self.label_space.k):
            raise ConfigError(
                f"count matrix shape {c.shape} does not match "
                f"{len(self.item_ids)} items x {self.label_space.k} labels"
            )
        if np.any(c < 0):
            raise ConfigError("vote counts must be non-negative")
        c.flags.writeable = False
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "item_ids", tuple(self.item_ids))


def _open_text(source: Source) -> io.TextIOBase:
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8", newline="")
    if isinstance(source, io.TextIOBase):
        return source
    # byte stream: decode as UTF-8
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def load_label_space(source: Source) -> LabelSpace:
    """Read an explicit label space: one label per line, file order canonical."""
    stream = _open_text(source)
    try:
        labels = [line.strip() for line in stream if line.strip()]
    except UnicodeDecodeError as exc:
        raise ParseError(f"label space file is not valid UTF-8: {exc}") from exc
    if not labels:
        raise EmptyInput("label space file has no labels")
    return LabelSpace(tuple(labels))


def load_annotations(source: Source, label_space: LabelSpace | None = None) -> AnnotationSet:
    """Parse the annotations CSV into an :class:`AnnotationSet`.

    Without an explicit ``label_space`` the space is inferred as the sorted
    set of distinct labels. Parsing is deterministic for identical input.
    """
    stream = _open_text(source)
    try:
        reader = csv.reader(stream)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInput("annotations CSV is empty") from None
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise ParseError(
                f"expected header {','.join(CSV_HEADER)!r}, got {','.join(header)!r}"
            )
        rows: list[tuple[str, str, str]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"line {lineno}: expected 3 fields, got {len(row)}")
            rows.append((row[0], row[1], row[2]))
    except UnicodeDecodeError as exc:
        raise ParseError(f"annotations CSV is not valid UTF-8: {exc}") from exc

    if not rows:
        raise EmptyInput("annotations CSV has no data rows")

    if label_space is None:
        label_space = LabelSpace(tuple(sorted({label for _, _, label in rows})))

    records = tuple(
        Annotation(item, annotator, label_space.index(label))
        for item, annotator, label in rows
    )
    return AnnotationSet(records=records, label_space=label_space)


def filter_min_annotations(a: AnnotationSet, min_annotations: int) -> AnnotationSet:
    """Drop items with fewer than ``min_annotations`` records."""
    if min_annotations <= 1:
        return a
    per_item: dict[str, int] = {}
    for rec in a.records:
        per_item[rec.item_id] = per_item.get(rec.item_id, 0) + 1
    kept = tuple(r for r in a.records if per_item[r.item_id] >= min_annotations)
    if not kept:
        raise EmptyInput(f"no item has >= {min_annotations} annotations")
    return AnnotationSet(records=kept, label_space=a.label_space)


def vote_counts(a: AnnotationSet) -> VoteCounts:
    """Count votes per (item, label); rows sum to the item's record count."""
    index = {item: i for i, item in enumerate(a.item_ids)}
    counts = np.zeros((a.n_items, a.label_space.k), dtype=np.int64)
    for rec in a.records:
        counts[index[rec.item_id], rec.label_index] += 1
    return VoteCounts(item_ids=a.item_ids, counts=counts, label_space=a.label_space)


def standard_normalize(c: VoteCounts) -> list[Categorical]:
    """Vote fractions per item: count / total. Zero exactly where count is zero."""
    dists = []
    for i, row in enumerate(c.counts):
        total = int(row.sum())
        if total == 0:
            raise NoAnnotations(f"item {c.item_ids[i]!r} has no annotations")
        dists.append(Categorical(row / total))
    return dists


def softmax_normalize(c: VoteCounts) -> list[Categorical]:
    """Softmax of raw vote counts; every class gets positive mass."""
    return [Categorical(_softmax_arr(row.astype(np.float64))) for row in c.counts]


def majority_vote(
    c: VoteCounts,
    tie_rule: str = "lowest_index",
    seed: int = 0,
) -> np.ndarray:
    """Plurality label per item; ties resolved by ``tie_rule``.

    ``lowest_index`` (default, logs a warning per tie), ``error`` raises
    :class:`TieError`, ``seeded_random`` picks uniformly among the tied
    labels with a generator seeded by ``seed``.
    """
    if tie_rule not in TIE_RULES:
        raise ConfigError(f"tie_rule must be one of {TIE_RULES}, got {tie_rule!r}")
    rng = np.random.default_rng(seed) if tie_rule == "seeded_random" else None
    winners = np.empty(len(c.item_ids), dtype=np.int64)
    for i, row in enumerate(c.counts):
        total = int(row.sum())
        if total == 0:
            raise NoAnnotations(f"item {c.item_ids[i]!r} has no annotations")
        top = int(row.max())
        tied = np.flatnonzero(row == top)
        if len(tied) == 1:
            winners[i] = tied[0]
        elif tie_rule == "error":
            raise TieError(f"item {c.item_ids[i]!r}: labels {tied.tolist()} tie at {top} votes")
        elif tie_rule == "seeded_random":
            winners[i] = rng.choice(tied)
        else:
            logger.warning(
                "item %r: labels %s tie at %d votes; taking lowest index",
                c.item_ids[i], tied.tolist(), top,
            )
            winners[i] = tied[0]
    return winners
