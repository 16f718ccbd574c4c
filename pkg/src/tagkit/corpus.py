"""Multi-label corpora: in-memory model, synthetic long-tailed generation, disk format.

A corpus directory looks like::

    corpus_dir/
      manifest.txt      # version, feature shape, class names (one per line)
      labels.txt        # <sample_id>\t<class,class,...>
      features/<id>.f32 # raw little-endian float32, row-major

Feature payloads shorter in time than the declared shape are zero-padded
at load; longer payloads are a shape error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .rng import stream

MAX_LABELS_PER_SAMPLE = 5

_ID_SAFE = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789._-")


class CorpusError(Exception):
    """Base class for corpus construction and I/O failures."""


class MalformedManifestError(CorpusError):
    pass


class ShapeMismatchError(CorpusError):
    pass


class UnknownClassError(CorpusError):
    pass


@dataclass
class ClassTable:
    """Class names plus per-class sample counts (number of samples carrying each label)."""

    names: list[str]
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if len(self.names) < 1:
            raise CorpusError("class table needs at least one class")
        if self.counts.shape != (len(self.names),):
            raise CorpusError("counts length does not match class names")
        if np.any(self.counts < 0):
            raise CorpusError("negative class count")

    @property
    def num_classes(self) -> int:
        return len(self.names)


@dataclass
class Sample:
    id: str
    features: np.ndarray  # (time, freq) or 1-D signal
    labels: np.ndarray  # multi-hot uint8, length C

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.labels.sum() < 1:
            raise CorpusError(f"sample {self.id!r} has no labels")
        if not np.all(np.isfinite(self.features)):
            raise CorpusError(f"sample {self.id!r} has non-finite features")


@dataclass
class MultiLabelCorpus:
    samples: list[Sample]
    class_table: ClassTable
    feature_shape: tuple[int, ...]

    def __post_init__(self):
        self.feature_shape = tuple(int(d) for d in self.feature_shape)
        if len(self.samples) < 1:
            raise CorpusError("corpus needs at least one sample")
        c = self.class_table.num_classes
        for s in self.samples:
            if s.features.shape != self.feature_shape:
                raise ShapeMismatchError(
                    f"sample {s.id!r} features {s.features.shape} != declared {self.feature_shape}"
                )
            if s.labels.shape != (c,):
                raise CorpusError(f"sample {s.id!r} label vector length != {c}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def num_classes(self) -> int:
        return self.class_table.num_classes

    def label_matrix(self) -> np.ndarray:
        """(N, C) multi-hot uint8 matrix."""
        return np.stack([s.labels for s in self.samples]).astype(np.uint8)

    def feature_tensor(self) -> np.ndarray:
        """(N, *feature_shape) float64 stack of all sample features."""
        return np.stack([s.features for s in self.samples])

    def with_labels(self, labels: np.ndarray) -> "MultiLabelCorpus":
        """Copy of the corpus with a replacement (N, C) label matrix (e.g. an enhanced set)."""
        labels = np.asarray(labels, dtype=np.uint8)
        if labels.shape != (len(self), self.num_classes):
            raise CorpusError("replacement label matrix has wrong shape")
        samples = [replace(s, labels=labels[i]) for i, s in enumerate(self.samples)]
        table = ClassTable(list(self.class_table.names), labels.sum(axis=0))
        return MultiLabelCorpus(samples, table, self.feature_shape)


def count_classes(corpus: MultiLabelCorpus) -> ClassTable:
    """Tally per-class sample counts from the label vectors."""
    counts = corpus.label_matrix().sum(axis=0).astype(np.int64)
    return ClassTable(list(corpus.class_table.names), counts)


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a synthetic long-tailed multi-label corpus.

    Class bit-counts follow a Zipf decay with exponent log(imbalance_ratio)/log(C),
    so the most/least frequent count ratio lands on imbalance_ratio. Each sample
    gets one primary class; non-head samples additionally carry the head class
    with probability `cooccurrence`. Features are unit Gaussian noise plus a
    class-specific frequency pattern on a random half-length time window, scaled
    by `planted_signal_strength`.

    pattern_seed controls the class signatures separately from the sample
    draws, so a train/eval corpus pair generated with different seeds but the
    same pattern_seed shares its planted classes. Defaults to `seed`.
    """

    num_classes: int
    num_samples: int
    imbalance_ratio: float = 100.0
    cooccurrence: float = 0.25
    seed: int = 0
    feature_shape: tuple[int, int] = (1056, 128)
    planted_signal_strength: float = 1.0
    pattern_seed: int | None = None

    def validate(self) -> None:
        if self.num_classes < 2:
            raise CorpusError("num_classes must be >= 2")
        if self.num_samples < self.num_classes:
            raise CorpusError("num_samples must be >= num_classes")
        if self.imbalance_ratio < 1:
            raise CorpusError("imbalance_ratio must be >= 1")
        if not 0.0 <= self.cooccurrence <= 1.0:
            raise CorpusError("cooccurrence must be in [0, 1]")
        if self.planted_signal_strength < 0:
            raise CorpusError("planted_signal_strength must be >= 0")
        if len(self.feature_shape) != 2 or any(d < 1 for d in self.feature_shape):
            raise CorpusError("feature_shape must be (time_frames, freq_bins)")

    @property
    def zipf_exponent(self) -> float:
        """Configured decay exponent of the sorted class counts."""
        return math.log(self.imbalance_ratio) / math.log(self.num_classes)


def _plan_counts(spec: SynthSpec) -> tuple[np.ndarray, int, int]:
    """Plan exact per-class bit counts.

    Returns (tail primary counts for classes 1..C-1, head primary count,
    head co-occurrence adds). Total bits of class k>0 equal its primary
    count; head bits = primaries + adds.
    """
    c, n, rho = spec.num_classes, spec.num_samples, spec.cooccurrence
    a = spec.zipf_exponent
    decay = (np.arange(1, c) + 1.0) ** (-a)
    tail_mass = float(decay.sum())
    # Solve for the head bit count s and head primary count p0 such that
    # tail bits = s * tail_mass, p0 + rho*(n - p0) = s, and primaries sum to n.
    s = n / (1.0 + tail_mass * (1.0 - rho))
    if rho < 1.0:
        p0 = (s - rho * n) / (1.0 - rho)
    else:
        p0 = 1.0
    p0 = min(max(p0, 1.0), n - (c - 1))

    # Largest-remainder integerization of the tail with floor 1.
    raw = decay * (n - p0) / tail_mass
    tail = np.maximum(1, np.floor(raw)).astype(np.int64)
    deficit = int(round(n - p0)) - int(tail.sum())
    if deficit > 0:
        order = np.argsort(-(raw - np.floor(raw)), kind="stable")
        for idx in order[:deficit]:
            tail[idx] += 1
    elif deficit < 0:
        order = np.argsort(raw - np.floor(raw), kind="stable")
        taken = 0
        for idx in order:
            while tail[idx] > 1 and taken < -deficit:
                tail[idx] -= 1
                taken += 1
            if taken >= -deficit:
                break
    head_primary = n - int(tail.sum())
    head_adds = int(np.clip(round(s) - head_primary, 0, n - head_primary))
    return tail, head_primary, head_adds


def generate_synthetic(spec: SynthSpec) -> MultiLabelCorpus:
    """Generate a corpus deterministically from the spec (pure function of SynthSpec)."""
    spec.validate()
    c, n = spec.num_classes, spec.num_samples
    t_frames, f_bins = spec.feature_shape
    rng = stream(spec.seed, "synth")

    tail, head_primary, head_adds = _plan_counts(spec)
    primaries = np.concatenate(
        [np.zeros(head_primary, dtype=np.int64)]
        + [np.full(tail[k - 1], k, dtype=np.int64) for k in range(1, c)]
    )
    rng.shuffle(primaries)

    labels = np.zeros((n, c), dtype=np.uint8)
    labels[np.arange(n), primaries] = 1
    non_head = np.flatnonzero(primaries != 0)
    if head_adds > 0 and len(non_head) > 0:
        picked = rng.choice(non_head, size=min(head_adds, len(non_head)), replace=False)
        labels[picked, 0] = 1

    # One frequency signature per class; the event occupies a random
    # half-length time window per (sample, label) occurrence.
    pattern_seed = spec.seed if spec.pattern_seed is None else spec.pattern_seed
    signatures = stream(pattern_seed, "synth-patterns").standard_normal((c, f_bins))
    signatures /= np.linalg.norm(signatures, axis=1, keepdims=True)
    window = max(1, t_frames // 2)

    pad = len(str(n))
    samples = []
    for i in range(n):
        x = rng.standard_normal((t_frames, f_bins))
        for k in np.flatnonzero(labels[i]):
            start = int(rng.integers(0, t_frames - window + 1))
            x[start : start + window, :] += spec.planted_signal_strength * signatures[k]
        # Stored payloads are float32; quantize now so disk round-trips are exact.
        x = x.astype(np.float32).astype(np.float64)
        samples.append(Sample(id=f"s{i:0{pad}d}", features=x, labels=labels[i]))

    names = [f"class{k:03d}" for k in range(c)]
    table = ClassTable(names, labels.sum(axis=0))
    return MultiLabelCorpus(samples, table, (t_frames, f_bins))


def write_corpus(corpus: MultiLabelCorpus, path: str | Path) -> None:
    path = Path(path)
    (path / "features").mkdir(parents=True, exist_ok=True)
    shape_str = " ".join(str(d) for d in corpus.feature_shape)
    lines = ["version 1", f"feature_shape {shape_str}", f"num_samples {len(corpus)}"]
    lines += [f"class {name}" for name in corpus.class_table.names]
    (path / "manifest.txt").write_text("\n".join(lines) + "\n")

    name_of = corpus.class_table.names
    with open(path / "labels.txt", "w") as fh:
        for s in corpus.samples:
            if not set(s.id) <= _ID_SAFE:
                raise CorpusError(f"sample id {s.id!r} is not filesystem-safe")
            tags = ",".join(name_of[k] for k in np.flatnonzero(s.labels))
            fh.write(f"{s.id}\t{tags}\n")
            s.features.astype("<f4").tofile(path / "features" / f"{s.id}.f32")


def read_corpus(path: str | Path) -> MultiLabelCorpus:
    path = Path(path)
    manifest = path / "manifest.txt"
    if not manifest.is_file():
        raise MalformedManifestError(f"missing manifest: {manifest}")

    shape: tuple[int, ...] | None = None
    declared_n: int | None = None
    names: list[str] = []
    for lineno, line in enumerate(manifest.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        key, _, rest = line.partition(" ")
        if key == "version":
            if rest.strip() != "1":
                raise MalformedManifestError(f"unsupported corpus version {rest!r}")
        elif key == "feature_shape":
            try:
                shape = tuple(int(tok) for tok in rest.split())
            except ValueError:
                raise MalformedManifestError(f"manifest line {lineno}: bad shape {rest!r}")
        elif key == "num_samples":
            declared_n = int(rest)
        elif key == "class":
            names.append(rest)
        else:
            raise MalformedManifestError(f"manifest line {lineno}: unknown key {key!r}")
    if shape is None or not names:
        raise MalformedManifestError("manifest must declare feature_shape and classes")
    index_of = {name: k for k, name in enumerate(names)}

    labels_file = path / "labels.txt"
    if not labels_file.is_file():
        raise MalformedManifestError(f"missing label index: {labels_file}")
    samples = []
    for lineno, line in enumerate(labels_file.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        sid, _, tags = line.partition("\t")
        bits = np.zeros(len(names), dtype=np.uint8)
        for tag in tags.split(","):
            tag = tag.strip()
            if not tag:
                continue
            if tag not in index_of:
                raise UnknownClassError(f"labels line {lineno}: class {tag!r} not in manifest")
            bits[index_of[tag]] = 1
        feats = _read_payload(path / "features" / f"{sid}.f32", shape, sid)
        samples.append(Sample(id=sid, features=feats, labels=bits))
    if declared_n is not None and declared_n != len(samples):
        raise MalformedManifestError(
            f"manifest declares {declared_n} samples, label index has {len(samples)}"
        )

    table = ClassTable(names, np.stack([s.labels for s in samples]).sum(axis=0))
    return MultiLabelCorpus(samples, table, shape)


def _read_payload(file: Path, shape: tuple[int, ...], sid: str) -> np.ndarray:
    if not file.is_file():
        raise ShapeMismatchError(f"sample {sid!r}: missing feature payload {file}")
    flat = np.fromfile(file, dtype="<f4").astype(np.float64)
    total = int(np.prod(shape))
    if flat.size == total:
        return flat.reshape(shape)
    # Variable-length inputs: zero-pad along time up to the declared shape.
    trailing = int(np.prod(shape[1:])) if len(shape) > 1 else 1
    if flat.size > total or flat.size % trailing != 0:
        raise ShapeMismatchError(
            f"sample {sid!r}: payload has {flat.size} values, declared shape {shape}"
        )
    out = np.zeros(shape, dtype=np.float64)
    have = flat.size // trailing
    out.reshape(-1, trailing)[:have] = flat.reshape(have, trailing)
    return out
