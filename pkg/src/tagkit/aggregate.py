"""Checkpoint weight averaging and prediction ensembling.

Weight averaging takes the coordinatewise mean of parameter vectors over a
late training window (by default from the first epoch where the learning
rate has dropped to a quarter of its base value). Ensembling averages the
post-sigmoid prediction matrices of a committee; logit-space averaging is
exposed because for the linear model variant it coincides exactly with
weight averaging.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .metrics import evaluate
from .model import Model, ModelConfig, ParameterVector


class AggregateError(Exception):
    pass


def average_weights(checkpoints: list[ParameterVector], start_epoch: int = 1) -> ParameterVector:
    """Coordinatewise mean of the epoch checkpoints from start_epoch to the last.

    Checkpoints are the per-epoch list of a run (index 0 is epoch 1); all
    manifests must match.
    """
    if not 1 <= start_epoch <= len(checkpoints):
        raise AggregateError(
            f"start_epoch {start_epoch} outside 1..{len(checkpoints)} (empty window)"
        )
    window = checkpoints[start_epoch - 1 :]
    manifest = window[0].manifest
    for ck in window[1:]:
        if ck.manifest != manifest:
            raise AggregateError("checkpoint manifests differ; cannot average")
    mean = np.mean(np.stack([ck.values for ck in window]), axis=0)
    return ParameterVector(values=mean, manifest=manifest)


@dataclass
class Committee:
    """Prediction matrices of committee members, each (N_eval, C) in [0, 1]."""

    members: list[np.ndarray]
    tags: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.members:
            raise AggregateError("committee must have at least one member")
        self.members = [np.asarray(m, dtype=np.float64) for m in self.members]
        shape = self.members[0].shape
        for m in self.members[1:]:
            if m.shape != shape:
                raise AggregateError(f"member shapes differ: {m.shape} vs {shape}")
        if not self.tags:
            self.tags = [f"member{i}" for i in range(len(self.members))]


def ensemble_mean(committee: Committee) -> np.ndarray:
    """Elementwise mean of the member prediction matrices."""
    return np.mean(np.stack(committee.members), axis=0)


@dataclass
class SweepPoint:
    start_epoch: int
    weight_avg_map: float
    prediction_avg_map: float


def sweep_start_epoch(
    checkpoints: list[ParameterVector],
    config: ModelConfig,
    eval_features: np.ndarray,
    eval_labels: np.ndarray,
) -> list[SweepPoint]:
    """mAP of weight-averaged and prediction-averaged models per averaging start epoch.

    For each candidate start, both curves average all checkpoints from that
    epoch to the last.
    """
    if not checkpoints:
        raise AggregateError("need at least one checkpoint")
    member_preds = []
    for ck in checkpoints:
        member_preds.append(Model.from_vector(config, ck).predict(eval_features))
    points = []
    for start in range(1, len(checkpoints) + 1):
        avg_vec = average_weights(checkpoints, start)
        wa_map = evaluate(
            Model.from_vector(config, avg_vec).predict(eval_features), eval_labels
        ).map
        pred = np.mean(np.stack(member_preds[start - 1 :]), axis=0)
        pa_map = evaluate(pred, eval_labels).map
        points.append(SweepPoint(start, wa_map, pa_map))
    return points


def write_sweep_csv(points: list[SweepPoint], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["start_epoch", "weight_avg_map", "prediction_avg_map"])
        for pt in points:
            w.writerow([pt.start_epoch, repr(pt.weight_avg_map), repr(pt.prediction_avg_map)])


def mean_logits(
    checkpoints: list[ParameterVector],
    config: ModelConfig,
    eval_features: np.ndarray,
) -> np.ndarray:
    """Mean of per-member pre-sigmoid logits (the linearity-test quantity)."""
    stacked = np.stack(
        [Model.from_vector(config, ck).forward_logits(eval_features) for ck in checkpoints]
    )
    return stacked.mean(axis=0)
