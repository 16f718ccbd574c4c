"""Feature-space augmentation: time/frequency masking and mixup.

Masking uses union semantics: the frequency band is blanked across all
time frames and the time band across all frequency bins, as two
independent maskings of the same matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MaskBoundsError(ValueError):
    pass


class MixupShapeError(ValueError):
    pass


@dataclass(frozen=True)
class MaskParams:
    """Offsets/lengths of one frequency band and one time band, in bins."""

    freq_off: int
    freq_len: int
    time_off: int
    time_len: int


def apply_mask(features: np.ndarray, params: MaskParams, mask_value: float = 0.0) -> np.ndarray:
    """Blank the frequency band [f0, f0+f) and time band [t0, t0+t); returns a copy.

    Features are (time, freq). Cells outside both bands are bit-identical
    to the input.
    """
    t_frames, f_bins = features.shape
    f0, f, t0, t = params.freq_off, params.freq_len, params.time_off, params.time_len
    if min(f0, f, t0, t) < 0 or f0 + f > f_bins or t0 + t > t_frames:
        raise MaskBoundsError(
            f"mask {params} out of bounds for features {features.shape}"
        )
    out = features.copy()
    out[:, f0 : f0 + f] = mask_value
    out[t0 : t0 + t, :] = mask_value
    return out


def mixup(
    x_i: np.ndarray,
    y_i: np.ndarray,
    x_j: np.ndarray,
    y_j: np.ndarray,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Convex combination of a sample pair and its labels.

    Works on 2-D feature matrices and 1-D signals alike; labels become
    soft vectors in [0, 1]^C.
    """
    if x_i.shape != x_j.shape:
        raise MixupShapeError(f"feature shapes differ: {x_i.shape} vs {x_j.shape}")
    if y_i.shape != y_j.shape:
        raise MixupShapeError(f"label shapes differ: {y_i.shape} vs {y_j.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    mu = 1.0 - lam
    x = lam * np.asarray(x_i, dtype=np.float64) + mu * np.asarray(x_j, dtype=np.float64)
    y = lam * np.asarray(y_i, dtype=np.float64) + mu * np.asarray(y_j, dtype=np.float64)
    return x, y
