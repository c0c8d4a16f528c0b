"""Feature records, CSV I/O, non-IID partitioning, label masking and folds."""

from __future__ import annotations

import contextlib
import contextvars
import csv
import logging
import math
import zlib
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, ParseError, SchemaError, SealedAccessError

log = logging.getLogger(__name__)

UNLABELED = None
HEADER_PREFIX = ("utterance_id", "speaker_id", "label")


@dataclass(frozen=True, eq=False)
class FeatureRecord:
    utterance_id: str
    speaker_id: str
    label: int | None
    features: np.ndarray

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64, copy=True)
        if feats.ndim != 1:
            raise SchemaError(f"{self.utterance_id}: features must be a vector")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)

    @property
    def is_labeled(self) -> bool:
        return self.label is not None

    def with_features(self, features: np.ndarray) -> "FeatureRecord":
        return FeatureRecord(self.utterance_id, self.speaker_id, self.label, features)

    def with_label(self, label: int | None) -> "FeatureRecord":
        return FeatureRecord(self.utterance_id, self.speaker_id, label, self.features)

    def key(self) -> tuple:
        """Hashable identity used for multiset comparisons."""
        return (self.utterance_id, self.speaker_id, self.label, self.features.tobytes())


# ---------------------------------------------------------------------------
# Sealed ground truth for masked samples

_EVAL_ACCESS = contextvars.ContextVar("semifedser_eval_access", default=False)


@contextlib.contextmanager
def evaluation_access():
    """Open the sealed label tables for the duration of the block."""
    token = _EVAL_ACCESS.set(True)
    try:
        yield
    finally:
        _EVAL_ACCESS.reset(token)


class SealedLabels:
    """True labels of masked samples, readable only under :func:`evaluation_access`."""

    __slots__ = ("_labels",)

    def __init__(self, labels: Mapping[str, int] | None = None):
        self._labels = dict(labels or {})

    def __len__(self) -> int:
        return len(self._labels)

    def __contains__(self, utterance_id: str) -> bool:
        return utterance_id in self._labels

    def reveal(self, utterance_id: str) -> int:
        if not _EVAL_ACCESS.get():
            raise SealedAccessError("sealed labels are only readable from evaluation code")
        return self._labels[utterance_id]

    def __repr__(self) -> str:
        return f"SealedLabels(<{len(self._labels)} hidden>)"


# ---------------------------------------------------------------------------
# CSV I/O


def write_features(records: Iterable[FeatureRecord], path: str | Path) -> None:
    records = list(records)
    dim = records[0].features.size if records else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([*HEADER_PREFIX, *(f"f{i}" for i in range(dim))])
        for r in records:
            if r.features.size != dim:
                raise SchemaError(f"{r.utterance_id}: dimension {r.features.size} != {dim}")
            label = "" if r.label is None else str(r.label)
            writer.writerow([r.utterance_id, r.speaker_id, label, *(repr(float(v)) for v in r.features)])


def load_features(path: str | Path) -> list[FeatureRecord]:
    """Read a feature CSV. An empty label field marks an unlabeled row."""
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file, header required", line=1) from None
        if tuple(header[:3]) != HEADER_PREFIX:
            raise SchemaError(f"header must start with {','.join(HEADER_PREFIX)}", line=1)
        dim = len(header) - 3
        expected = [f"f{i}" for i in range(dim)]
        if header[3:] != expected or dim == 0:
            raise SchemaError("feature columns must be named f0..f{D-1}", line=1)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != dim + 3:
                raise SchemaError(f"expected {dim} features, got {len(row) - 3}", line=line)
            uid, spk, label_s = row[0], row[1], row[2].strip()
            if not uid or not spk:
                raise ParseError("utterance_id and speaker_id must be non-empty", line=line)
            try:
                label = int(label_s) if label_s else UNLABELED
                feats = np.array([float(v) for v in row[3:]])
            except ValueError as exc:
                raise ParseError(str(exc), line=line) from None
            if label is not None and label < 0:
                raise ParseError(f"negative label {label}", line=line)
            records.append(FeatureRecord(uid, spk, label, feats))
    return records


def class_histogram(records: Iterable[FeatureRecord], n_classes: int) -> list[int]:
    counts = [0] * n_classes
    for r in records:
        if r.label is not None:
            counts[r.label] += 1
    return counts


# ---------------------------------------------------------------------------
# Normalization


def znorm(x: np.ndarray) -> np.ndarray:
    """Column-wise z-score; (numerically) constant columns map to zero."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    degenerate = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    out = (x - mean) / np.where(degenerate, 1.0, std)
    out[:, degenerate] = 0.0
    return out


def znorm_records(records: Sequence[FeatureRecord]) -> list[FeatureRecord]:
    if not records:
        raise ConfigError("cannot z-normalize an empty group")
    normed = znorm(np.stack([r.features for r in records]))
    return [r.with_features(f) for r, f in zip(records, normed)]


def znorm_per_client(groups: Mapping[str, Sequence[FeatureRecord]]) -> dict[str, list[FeatureRecord]]:
    return {key: znorm_records(recs) for key, recs in groups.items()}


# ---------------------------------------------------------------------------
# Partitioning


def _stable_rng(seed: int, *parts: str | int) -> np.random.Generator:
    words = [int(seed) & 0xFFFFFFFF]
    for p in parts:
        words.append(zlib.crc32(str(p).encode()) if isinstance(p, str) else int(p))
    return np.random.default_rng(words)


@dataclass
class ClientPool:
    client_id: str
    speaker_id: str
    records: list[FeatureRecord]

    @property
    def labels(self) -> set[int]:
        return {r.label for r in self.records}


def by_speaker(records: Iterable[FeatureRecord]) -> dict[str, list[FeatureRecord]]:
    groups: dict[str, list[FeatureRecord]] = {}
    for r in records:
        groups.setdefault(r.speaker_id, []).append(r)
    return dict(sorted(groups.items()))


def _shard_speaker(speaker, records, shards, per_shard, seed) -> list[ClientPool]:
    rng = _stable_rng(seed, "partition", speaker)
    classes = sorted({r.label for r in records})
    if len(classes) < per_shard:
        log.warning("speaker %s has only %d classes; shards use all of them", speaker, len(classes))
        subsets = [tuple(classes)]
    else:
        subsets = list(combinations(classes, per_shard))
        subsets = [subsets[i] for i in rng.permutation(len(subsets))]
    shard_classes = [subsets[s % len(subsets)] for s in range(shards)]

    assign: dict[int, int] = {}
    for c in classes:
        holders = [s for s in range(shards) if c in shard_classes[s]]
        members = [i for i, r in enumerate(records) if r.label == c]
        if not holders:
            log.warning("speaker %s: class %d not covered by any shard, %d samples dropped", speaker, c, len(members))
            continue
        for j, pos in enumerate(rng.permutation(len(members))):
            assign[members[pos]] = holders[j % len(holders)]

    pools = [ClientPool(f"{speaker}#{s}", speaker, []) for s in range(shards)]
    for i, r in enumerate(records):
        if i in assign:
            pools[assign[i]].records.append(r)
    return [p for p in pools if p.records]


def partition_noniid(
    records: Iterable[FeatureRecord],
    shards_per_speaker: int = 4,
    classes_per_shard: int = 3,
    seed: int = 0,
) -> list[ClientPool]:
    """Split each speaker into label-skewed shards, one client per shard.

    With at least ``classes_per_shard + 1`` classes, the shards of a speaker
    cycle through the ``classes_per_shard``-subsets of its classes in a seeded
    order, and every class's samples are dealt round-robin over the shards
    that hold that class.
    """
    if shards_per_speaker < 1 or classes_per_shard < 1:
        raise ConfigError("shards_per_speaker and classes_per_shard must be >= 1")
    groups = by_speaker(records)
    for spk, recs in groups.items():
        if any(r.label is None for r in recs):
            raise ConfigError(f"speaker {spk} has unlabeled records; partitioning needs ground truth")
    pools = []
    for spk, recs in groups.items():
        pools.extend(_shard_speaker(spk, recs, shards_per_speaker, classes_per_shard, seed))
    return pools


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _stratified_take(labels: Sequence[int], rate: float, rng: np.random.Generator, floor_one: bool) -> set[int]:
    chosen: set[int] = set()
    for c in sorted(set(labels)):
        idx = [i for i, y in enumerate(labels) if y == c]
        n = _round_half_up(rate * len(idx))
        if floor_one:
            n = max(n, 1)
        n = min(n, len(idx))
        perm = rng.permutation(len(idx))
        chosen.update(idx[p] for p in perm[:n])
    return chosen


def mask_labels(
    records: Sequence[FeatureRecord], label_rate: float, seed: int = 0, key: str | None = None
) -> tuple[list[FeatureRecord], list[FeatureRecord], SealedLabels]:
    """Keep ``label_rate`` of each class labeled (at least one), hide the rest.

    Returns ``(labeled, unlabeled, sealed)`` where the unlabeled records carry
    no label and their ground truth sits in ``sealed``.
    """
    if not 0 < label_rate <= 1:
        raise ConfigError(f"label_rate must be in (0, 1], got {label_rate}")
    if not records:
        return [], [], SealedLabels()
    if key is None:
        key = records[0].speaker_id + "|" + records[0].utterance_id
    rng = _stable_rng(seed, "mask", key)
    keep = _stratified_take([r.label for r in records], label_rate, rng, floor_one=True)
    labeled, unlabeled, hidden = [], [], {}
    for i, r in enumerate(records):
        if i in keep:
            labeled.append(r)
        else:
            hidden[r.utterance_id] = r.label
            unlabeled.append(r.with_label(UNLABELED))
    return labeled, unlabeled, SealedLabels(hidden)


# ---------------------------------------------------------------------------
# Synthetic corpus


@dataclass(frozen=True)
class SynthSpec:
    speakers: int = 8
    per_speaker: int = 160
    classes: int = 4
    dim: int = 32
    class_sep: float = 3.0
    speaker_shift: float = 1.0
    noise: float = 1.0
    proportions: tuple[float, ...] | None = None

    def __post_init__(self):
        for name in ("speakers", "per_speaker", "classes", "dim"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"synth {name} must be positive")
        for name in ("class_sep", "speaker_shift", "noise"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"synth {name} must be finite and >= 0")
        if self.proportions is not None:
            p = self.proportions
            if len(p) != self.classes or any(v < 0 for v in p) or sum(p) <= 0:
                raise ConfigError("proportions need one non-negative weight per class")


IEMOCAP_PROPORTIONS = (1099, 947, 608, 289)


def apportion(total: int, weights: Sequence[float]) -> list[int]:
    """Largest-remainder split of ``total`` into integer parts."""
    w = np.asarray(weights, dtype=np.float64)
    raw = total * w / w.sum()
    base = np.floor(raw).astype(int)
    short = total - int(base.sum())
    order = sorted(range(len(w)), key=lambda i: (-(raw[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    return base.tolist()


def class_means(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Class centroids with pairwise distance exactly ``class_sep`` when dim >= classes."""
    if spec.dim >= spec.classes:
        q, _ = np.linalg.qr(rng.standard_normal((spec.dim, spec.classes)))
        return (spec.class_sep / math.sqrt(2.0)) * q.T
    m = rng.standard_normal((spec.classes, spec.dim))
    return spec.class_sep * m / np.linalg.norm(m, axis=1, keepdims=True)


def synth_generate(spec: SynthSpec, seed: int = 0) -> list[FeatureRecord]:
    """Gaussian class blobs with a per-speaker offset."""
    rng = np.random.default_rng(seed)
    means = class_means(spec, rng)
    weights = spec.proportions or (1.0,) * spec.classes
    counts = apportion(spec.per_speaker, weights)
    records = []
    for s in range(spec.speakers):
        spk = f"spk{s:02d}"
        direction = rng.standard_normal(spec.dim)
        offset = spec.speaker_shift * direction / np.linalg.norm(direction)
        labels = np.repeat(np.arange(spec.classes), counts)
        labels = labels[rng.permutation(labels.size)]
        noise = rng.standard_normal((labels.size, spec.dim)) * spec.noise
        for i, y in enumerate(labels):
            feats = means[y] + offset + noise[i]
            records.append(FeatureRecord(f"{spk}_u{i:04d}", spk, int(y), feats))
    return records


# ---------------------------------------------------------------------------
# Folds


@dataclass
class ClientSplit:
    client_id: str
    speaker_id: str
    train: list[FeatureRecord]
    val: list[FeatureRecord]


@dataclass
class PartitionedDataset:
    clients: list[ClientSplit]
    test_records: list[FeatureRecord]
    class_count: int
    feature_dim: int
    test_speakers: list[str] = field(default_factory=list)

    @property
    def train_speakers(self) -> list[str]:
        return sorted({c.speaker_id for c in self.clients})


def split_validation(records: Sequence[FeatureRecord], val_fraction: float, seed: int, client_id: str):
    rng = _stable_rng(seed, "val", client_id)
    val_idx = _stratified_take([r.label for r in records], val_fraction, rng, floor_one=False)
    train = [r for i, r in enumerate(records) if i not in val_idx]
    val = [r for i, r in enumerate(records) if i in val_idx]
    return train, val


def build_dataset(
    train_records: Sequence[FeatureRecord],
    test_records: Sequence[FeatureRecord],
    n_classes: int,
    seed: int = 0,
    shards_per_speaker: int = 4,
    classes_per_shard: int = 3,
    val_fraction: float = 0.2,
) -> PartitionedDataset:
    """Shard the training speakers into clients and normalize everything.

    Each client is z-normalized over all its records before the
    train/validation split; test records are normalized per speaker.
    """
    if not 0 <= val_fraction < 1:
        raise ConfigError("val_fraction must be in [0, 1)")
    clients = []
    for pool in partition_noniid(train_records, shards_per_speaker, classes_per_shard, seed):
        normed = znorm_records(pool.records)
        train, val = split_validation(normed, val_fraction, seed, pool.client_id)
        clients.append(ClientSplit(pool.client_id, pool.speaker_id, train, val))
    test_groups = by_speaker(test_records)
    test = [r for recs in znorm_per_client(test_groups).values() for r in recs] if test_groups else []
    dims = {r.features.size for r in [*train_records, *test_records]}
    if len(dims) != 1:
        raise SchemaError(f"inconsistent feature dimensions {sorted(dims)}")
    return PartitionedDataset(clients, test, n_classes, dims.pop(), sorted(test_groups))


def make_folds(
    records: Sequence[FeatureRecord],
    n_folds: int = 5,
    seed: int = 0,
    n_classes: int | None = None,
    shards_per_speaker: int = 4,
    classes_per_shard: int = 3,
    val_fraction: float = 0.2,
) -> list[PartitionedDataset]:
    """Speaker-level cross-validation: each fold holds out one speaker group."""
    speakers = sorted({r.speaker_id for r in records})
    if n_folds < 1 or len(speakers) < n_folds:
        raise ConfigError(f"need at least {n_folds} speakers for {n_folds} folds, have {len(speakers)}")
    if n_classes is None:
        n_classes = 1 + max(r.label for r in records if r.label is not None)
    order = np.random.default_rng(seed).permutation(len(speakers))
    groups = [sorted(speakers[i] for i in g) for g in np.array_split(order, n_folds)]
    folds = []
    for held_out in groups:
        test_set = set(held_out)
        train = [r for r in records if r.speaker_id not in test_set]
        test = [r for r in records if r.speaker_id in test_set]
        folds.append(build_dataset(train, test, n_classes, seed, shards_per_speaker, classes_per_shard, val_fraction))
    return folds
