"""Named, splittable random streams derived from a single master seed.

Every stochastic stage of an experiment (corpus synthesis, per-epoch
sampling plans, parameter init, ...) pulls from its own named stream, so
toggling one stage never perturbs the randomness of another and any
stream can be re-derived out of order.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream_seed(master_seed: int, name: str, *indices: int) -> np.random.SeedSequence:
    """Derive the seed for stream `name` (optionally sub-indexed, e.g. by epoch)."""
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.SeedSequence([int(master_seed), tag, *[int(i) for i in indices]])


def stream(master_seed: int, name: str, *indices: int) -> np.random.Generator:
    """A fresh generator positioned at the start of the named stream."""
    return np.random.default_rng(stream_seed(master_seed, name, *indices))
