"""Ontology-constrained label repair driven by teacher prediction scores.

Two error families are repaired by adding labels, never removing them:
a sample labeled with a parent but missing a present child (type1), and
a sample labeled with a child but missing its parent (type2). Candidates
come only from one-hop neighbors of the sample's ORIGINAL labels (single
pass), and a candidate is added iff the teacher score strictly exceeds
the per-class threshold.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ontology import Ontology

log = logging.getLogger(__name__)

POLICIES = ("mean", "p25", "p10", "p5")
MODES = ("type1", "type2", "both")


class LabelFixError(Exception):
    pass


class UndefinedThresholdError(LabelFixError):
    pass


@dataclass
class ThresholdSet:
    """Per-class score thresholds; nan marks classes with no positive samples."""

    values: np.ndarray
    policy: str

    def defined(self) -> np.ndarray:
        return ~np.isnan(self.values)


def make_thresholds(scores: np.ndarray, labels: np.ndarray, policy: str) -> ThresholdSet:
    """Thresholds from the teacher's scores on each class's positive samples.

    policy "mean" takes the mean positive score; "p25"/"p10"/"p5" take the
    nearest-rank percentile of the sorted positive scores (lower percentile,
    lower threshold, more labels added). Classes without positives get a
    nan marker; using one during repair is an error unless permissive.
    """
    if policy not in POLICIES:
        raise LabelFixError(f"policy must be one of {POLICIES}, got {policy!r}")
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise LabelFixError("scores and labels must both be N x C")
    if scores.min() < 0.0 or scores.max() > 1.0:
        raise LabelFixError("teacher scores must lie in [0, 1]")

    c = scores.shape[1]
    values = np.full(c, np.nan)
    for k in range(c):
        pos = scores[labels[:, k] > 0, k]
        if pos.size == 0:
            continue
        if policy == "mean":
            values[k] = pos.mean()
        else:
            pct = int(policy[1:])
            ranked = np.sort(pos)
            rank = max(1, math.ceil(pct / 100.0 * pos.size))  # nearest-rank
            values[k] = ranked[rank - 1]
    return ThresholdSet(values=values, policy=policy)


@dataclass
class EnhanceAudit:
    """What a repair pass did: per-class additions and the headline tallies."""

    labels_added: int
    original_bits: int
    per_class_added: np.ndarray
    skipped_undefined: list[int] = field(default_factory=list)
    split: str = "train"

    @property
    def added_pct(self) -> float:
        return 100.0 * self.labels_added / self.original_bits

    @property
    def impacted_classes(self) -> list[int]:
        return np.flatnonzero(self.per_class_added > 0).tolist()

    def write_csv(self, path: str | Path, class_names: list[str] | None = None) -> None:
        names = class_names or [f"class{k:03d}" for k in range(len(self.per_class_added))]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class", "labels_added", "impacted"])
            for k, name in enumerate(names):
                w.writerow([name, int(self.per_class_added[k]), int(self.per_class_added[k] > 0)])


def _candidate_matrix(onto: Ontology, mode: str) -> np.ndarray:
    """A[k, j] = 1 iff j is a repair candidate when k is an original label."""
    c = onto.num_classes
    a = np.zeros((c, c), dtype=np.uint8)
    for k in range(c):
        if mode in ("type1", "both"):
            for child in onto.children[k]:
                a[k, child] = 1
        if mode in ("type2", "both"):
            for parent in onto.parents[k]:
                a[k, parent] = 1
    return a


def enhance(
    labels: np.ndarray,
    scores: np.ndarray,
    onto: Ontology,
    thresholds: ThresholdSet,
    mode: str = "both",
    strict: bool = True,
    split: str = "train",
) -> tuple[np.ndarray, EnhanceAudit]:
    """Single-pass ontology-constrained label addition.

    For every sample, candidates are the one-hop neighbors (per mode) of the
    sample's original labels; a candidate is added iff its teacher score
    strictly exceeds its threshold and it is not already labeled. In strict
    mode a candidate with an undefined threshold raises; otherwise such
    classes are skipped with a warning.
    """
    if mode not in MODES:
        raise LabelFixError(f"mode must be one of {MODES}, got {mode!r}")
    labels = np.asarray(labels).astype(np.uint8)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape or labels.ndim != 2:
        raise LabelFixError("labels and scores must both be N x C")
    if labels.shape[1] != onto.num_classes or len(thresholds.values) != onto.num_classes:
        raise LabelFixError("class-count mismatch between labels, ontology, and thresholds")

    cand = (labels @ _candidate_matrix(onto, mode)) > 0
    undefined = ~thresholds.defined()
    skipped: list[int] = []
    hit_undefined = cand.any(axis=0) & undefined
    if hit_undefined.any():
        skipped = np.flatnonzero(hit_undefined).tolist()
        if strict:
            raise UndefinedThresholdError(
                f"candidate classes {skipped} have undefined thresholds"
            )
        log.warning("skipping candidate classes with undefined thresholds: %s", skipped)

    with np.errstate(invalid="ignore"):  # nan thresholds compare False
        add = cand & (scores > thresholds.values[None, :]) & (labels == 0)
    enhanced = (labels | add).astype(np.uint8)
    audit = EnhanceAudit(
        labels_added=int(add.sum()),
        original_bits=int(labels.sum()),
        per_class_added=add.sum(axis=0).astype(np.int64),
        skipped_undefined=skipped,
        split=split,
    )
    return enhanced, audit


def enhance_eval_set(
    labels: np.ndarray,
    scores: np.ndarray,
    onto: Ontology,
    thresholds: ThresholdSet,
    mode: str = "both",
    strict: bool = True,
) -> tuple[np.ndarray, EnhanceAudit]:
    """Same repair machinery applied to an evaluation split (audited as such)."""
    return enhance(labels, scores, onto, thresholds, mode=mode, strict=strict, split="eval")
