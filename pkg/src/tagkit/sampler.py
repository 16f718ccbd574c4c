"""Balanced sampling plans: inverse-count weights, per-epoch draw plans, coverage.

All randomness for an epoch is pre-drawn into an EpochPlan so training
workers can consume draws in any order; the plan for a given
(seed, epoch) never depends on who consumed what. Draw blocks happen in
a fixed order (primary indices, mixup gates, partners, lambdas, frequency
masks, time masks), which lets `simulate_coverage` re-derive just the
index blocks from the same stream and agree exactly with plan consumers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import ClassTable
from .rng import stream_seed


class SamplerError(Exception):
    pass


@dataclass(frozen=True)
class AugmentConfig:
    """Knobs of the sampling/augmentation stage.

    freq_mask_max / time_mask_max are the maximum mask lengths in bins;
    mixup_rate is the probability a draw is a mixed pair; mixup_alpha is
    the Beta concentration for the mixing coefficient; balanced switches
    between weighted multinomial draws and plain reshuffled traversal.
    """

    freq_mask_max: int = 48
    time_mask_max: int = 192
    mixup_rate: float = 0.5
    mixup_alpha: float = 10.0
    balanced: bool = True
    mask_value: float = 0.0

    def validate(self, feature_shape: tuple[int, int]) -> None:
        t_frames, f_bins = feature_shape
        if not 0 <= self.freq_mask_max <= f_bins:
            raise SamplerError(f"freq_mask_max must be in [0, {f_bins}]")
        if not 0 <= self.time_mask_max <= t_frames:
            raise SamplerError(f"time_mask_max must be in [0, {t_frames}]")
        if not 0.0 <= self.mixup_rate <= 1.0:
            raise SamplerError("mixup_rate must be in [0, 1]")
        if self.mixup_alpha <= 0:
            raise SamplerError("mixup_alpha must be > 0")


def make_weights(class_table: ClassTable, labels: np.ndarray) -> np.ndarray:
    """Per-sample sampling weight: sum of inverse class counts over the sample's labels."""
    labels = np.asarray(labels)
    counts = class_table.counts
    present = labels.any(axis=0)
    if np.any(present & (counts == 0)):
        bad = np.flatnonzero(present & (counts == 0))
        raise SamplerError(f"classes {bad.tolist()} appear in labels but have zero count")
    recip = np.zeros(len(counts), dtype=np.float64)
    nz = counts > 0
    recip[nz] = 1.0 / counts[nz]
    w = labels.astype(np.float64) @ recip
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise SamplerError("every sample must have positive finite weight")
    return w


@dataclass
class EpochPlan:
    """Pre-drawn draws for one epoch.

    partner/mix_lambda hold sentinels (-1, 1.0) where is_mixup is false.
    Mask fields are offsets/lengths in bins satisfying off+len <= dim.
    """

    primary: np.ndarray
    is_mixup: np.ndarray
    partner: np.ndarray
    mix_lambda: np.ndarray
    freq_off: np.ndarray
    freq_len: np.ndarray
    time_off: np.ndarray
    time_len: np.ndarray

    def __len__(self) -> int:
        return len(self.primary)

    def to_text(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write("draw\tprimary\tis_mixup\tpartner\tlambda\tf0\tf\tt0\tt\n")
            for n in range(len(self)):
                fh.write(
                    f"{n}\t{self.primary[n]}\t{int(self.is_mixup[n])}\t"
                    f"{self.partner[n]}\t{float(self.mix_lambda[n])!r}\t"
                    f"{self.freq_off[n]}\t{self.freq_len[n]}\t"
                    f"{self.time_off[n]}\t{self.time_len[n]}\n"
                )

    @classmethod
    def from_text(cls, path: str | Path) -> "EpochPlan":
        rows = Path(path).read_text().splitlines()[1:]
        cols = list(zip(*[line.split("\t") for line in rows if line.strip()]))
        return cls(
            primary=np.array(cols[1], dtype=np.int64),
            is_mixup=np.array(cols[2], dtype=np.int64).astype(bool),
            partner=np.array(cols[3], dtype=np.int64),
            mix_lambda=np.array(cols[4], dtype=np.float64),
            freq_off=np.array(cols[5], dtype=np.int64),
            freq_len=np.array(cols[6], dtype=np.int64),
            time_off=np.array(cols[7], dtype=np.int64),
            time_len=np.array(cols[8], dtype=np.int64),
        )


def _draw_indices(
    weights: np.ndarray, config: AugmentConfig, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """First three draw blocks shared by plan_epoch and simulate_coverage."""
    n = len(weights)
    if config.balanced:
        p = weights / weights.sum()
        primary = rng.choice(n, size=n, replace=True, p=p)
    else:
        primary = rng.permutation(n)
    gates = rng.random(n) < config.mixup_rate
    partner = rng.integers(0, n, size=n)
    lam = rng.beta(config.mixup_alpha, config.mixup_alpha, size=n)
    return primary.astype(np.int64), gates, partner.astype(np.int64), lam


def plan_epoch(
    weights: np.ndarray,
    config: AugmentConfig,
    feature_shape: tuple[int, int],
    rng_seed,
) -> EpochPlan:
    """Pre-draw one epoch of N sampling/augmentation decisions.

    rng_seed may be an int or a SeedSequence; pass stream_seed(seed,
    "sampler", epoch) for the reproducible per-epoch stream.
    """
    config.validate(feature_shape)
    if np.any(np.asarray(weights) <= 0):
        raise SamplerError("weights must be positive")
    t_frames, f_bins = feature_shape
    rng = np.random.default_rng(rng_seed)
    n = len(weights)

    primary, gates, partner, lam = _draw_indices(weights, config, rng)
    f_len = rng.integers(0, config.freq_mask_max + 1, size=n)
    f_off = rng.integers(0, f_bins - f_len + 1)
    t_len = rng.integers(0, config.time_mask_max + 1, size=n)
    t_off = rng.integers(0, t_frames - t_len + 1)

    partner = np.where(gates, partner, -1)
    lam = np.where(gates, lam, 1.0)
    return EpochPlan(
        primary=primary,
        is_mixup=gates,
        partner=partner,
        mix_lambda=lam,
        freq_off=f_off.astype(np.int64),
        freq_len=f_len.astype(np.int64),
        time_off=t_off.astype(np.int64),
        time_len=t_len.astype(np.int64),
    )


@dataclass
class CoverageTrace:
    """Fraction of the corpus never drawn after each epoch, plus class draw counts."""

    unseen_fraction: np.ndarray  # (epochs,)
    class_frequency: np.ndarray  # (C,) draws landing on samples of each class

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "unseen_fraction"])
            for e, frac in enumerate(self.unseen_fraction, start=1):
                w.writerow([e, repr(float(frac))])


def simulate_coverage(
    weights: np.ndarray,
    labels: np.ndarray,
    config: AugmentConfig,
    epochs: int,
    rng_seed: int,
) -> CoverageTrace:
    """Track which samples the sampler would feed the model across epochs.

    A sample counts as seen when drawn as a primary or as a mixup partner.
    Uses the same per-epoch streams as plan_epoch, so the trace matches
    what an actual training run would consume.
    """
    if epochs < 1:
        raise SamplerError("epochs must be >= 1")
    labels = np.asarray(labels)
    n = len(weights)
    seen = np.zeros(n, dtype=bool)
    unseen = np.empty(epochs, dtype=np.float64)
    class_freq = np.zeros(labels.shape[1], dtype=np.int64)
    for epoch in range(1, epochs + 1):
        rng = np.random.default_rng(stream_seed(rng_seed, "sampler", epoch))
        primary, gates, partner, _ = _draw_indices(weights, config, rng)
        seen[primary] = True
        seen[partner[gates]] = True
        class_freq += labels[primary].sum(axis=0).astype(np.int64)
        class_freq += labels[partner[gates]].sum(axis=0).astype(np.int64)
        unseen[epoch - 1] = 1.0 - seen.mean()
    return CoverageTrace(unseen_fraction=unseen, class_frequency=class_freq)
