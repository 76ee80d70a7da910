"""Datasets, long-tailed class profiles, and Dirichlet client partitions.

All randomized steps draw from generators derived with rngs stream tags, so
a (seed, config) pair always produces the same dataset, subsample, and
partition regardless of process or worker count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rngs
from .errors import ConfigError, FormatError

Array = np.ndarray


def _frozen(a, dtype) -> Array:
    out = np.array(a, dtype=dtype)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class LabeledDataset:
    """Immutable sample matrix with labels, class names, and stable sample ids.

    ids survive subsampling and partitioning, letting embedding providers
    key per-sample vectors no matter how the data was split.
    """

    samples: Array
    labels: Array
    class_names: tuple[str, ...]
    ids: Array

    def __post_init__(self):
        samples = _frozen(self.samples, np.float64)
        labels = _frozen(self.labels, np.int64)
        ids = _frozen(self.ids, np.int64)
        if samples.ndim != 2:
            raise ConfigError(f"samples must be a matrix, got shape {samples.shape}")
        n = samples.shape[0]
        if labels.shape != (n,) or ids.shape != (n,):
            raise ConfigError("labels and ids must have one entry per sample")
        names = tuple(self.class_names)
        c = len(names)
        if c == 0:
            raise ConfigError("at least one class name required")
        if len(set(names)) != c:
            raise ConfigError("class names must be distinct")
        if n and (labels.min() < 0 or labels.max() >= c):
            raise ConfigError(f"labels must lie in [0, {c})")
        if len(np.unique(ids)) != n:
            raise ConfigError("sample ids must be unique")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", names)
        object.__setattr__(self, "ids", ids)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def input_dim(self) -> int:
        return self.samples.shape[1]

    def __len__(self) -> int:
        return self.samples.shape[0]

    def take(self, idx: Array) -> "LabeledDataset":
        return LabeledDataset(
            self.samples[idx], self.labels[idx], self.class_names, self.ids[idx]
        )

    def class_counts(self) -> Array:
        return np.bincount(self.labels, minlength=self.num_classes)


def make_longtail_counts(num_classes: int, n_max: int, imbalance: float) -> Array:
    """Per-class sizes n_c = round(n_max * IF^(-c/(C-1))), halves rounding up.

    Class 0 keeps n_max samples and the last class keeps round(n_max / IF),
    so the head-to-tail ratio equals the imbalance factor.  IF = 1 gives a
    flat profile.
    """
    if num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
    if imbalance < 1:
        raise ConfigError(f"imbalance factor must be >= 1, got {imbalance}")
    if n_max < imbalance:
        raise ConfigError(
            f"n_max must be >= imbalance factor, got n_max={n_max} IF={imbalance}"
        )
    c = np.arange(num_classes, dtype=np.float64)
    raw = n_max * imbalance ** (-c / (num_classes - 1))
    counts = np.floor(raw + 0.5).astype(np.int64)
    return counts


def subsample_longtail(data: LabeledDataset, counts: Array, seed: int) -> LabeledDataset:
    """Keep the first counts[c] samples of each class after a seeded shuffle."""
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape != (data.num_classes,):
        raise ConfigError("counts must have one entry per class")
    have = data.class_counts()
    short = np.where(counts > have)[0]
    if short.size:
        c = int(short[0])
        raise ConfigError(f"class {c} has {have[c]} samples, cannot keep {counts[c]}")
    g = rngs.generator(seed, rngs.SUBSAMPLE)
    keep = []
    for c in range(data.num_classes):
        idx = np.where(data.labels == c)[0]
        g.shuffle(idx)
        keep.append(idx[: counts[c]])
    return data.take(np.concatenate(keep))


def largest_remainder(weights: Array, total: int) -> Array:
    """Integer apportionment of total by weights; ties go to the lowest index."""
    weights = np.asarray(weights, dtype=np.float64)
    if total < 0:
        raise ConfigError(f"total must be >= 0, got {total}")
    s = weights.sum()
    if s <= 0:
        raise ConfigError("weights must have a positive sum")
    quota = weights / s * total
    base = np.floor(quota).astype(np.int64)
    rem = total - int(base.sum())
    if rem:
        frac = quota - base
        # Stable sort on -frac keeps low indices first among ties.
        order = np.argsort(-frac, kind="stable")
        base[order[:rem]] += 1
    return base


@dataclass(frozen=True)
class PartitionSpec:
    """How to split a dataset: client count, Dirichlet concentration, seed."""

    num_clients: int
    alpha: float
    seed: int

    def __post_init__(self):
        if self.num_clients < 1:
            raise ConfigError(f"num_clients must be >= 1, got {self.num_clients}")
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")


@dataclass(frozen=True)
class Partition:
    """client_indices[k] lists the rows of the source dataset held by client k."""

    client_indices: tuple[Array, ...]

    def __post_init__(self):
        frozen = tuple(_frozen(idx, np.int64) for idx in self.client_indices)
        object.__setattr__(self, "client_indices", frozen)

    @property
    def num_clients(self) -> int:
        return len(self.client_indices)

    def sizes(self) -> Array:
        return np.array([len(idx) for idx in self.client_indices], dtype=np.int64)

    def shards(self, data: LabeledDataset) -> tuple[LabeledDataset, ...]:
        return tuple(data.take(idx) for idx in self.client_indices)

    def count_table(self, data: LabeledDataset) -> Array:
        """K x C matrix of per-client per-class sample counts."""
        table = np.zeros((self.num_clients, data.num_classes), dtype=np.int64)
        for k, idx in enumerate(self.client_indices):
            table[k] = np.bincount(data.labels[idx], minlength=data.num_classes)
        return table


def dirichlet_partition(data: LabeledDataset, spec: PartitionSpec) -> Partition:
    """Split every class across clients by a Dirichlet(alpha) draw.

    Class-c sample counts per client come from largest-remainder rounding of
    the Dirichlet proportions, so each class is conserved exactly.  A client
    that ends up with nothing receives one sample moved from the largest
    shard (lowest donor index on ties), keeping every client non-empty.
    """
    if len(data) < spec.num_clients:
        raise ConfigError(
            f"cannot give {spec.num_clients} clients at least one sample "
            f"from {len(data)} total"
        )
    g = rngs.generator(spec.seed, rngs.PARTITION)
    shards: list[list[Array]] = [[] for _ in range(spec.num_clients)]
    for c in range(data.num_classes):
        idx = np.where(data.labels == c)[0]
        if idx.size == 0:
            continue
        g.shuffle(idx)
        props = g.dirichlet(np.full(spec.num_clients, spec.alpha))
        counts = largest_remainder(props, idx.size)
        stop = np.cumsum(counts)
        start = stop - counts
        for k in range(spec.num_clients):
            if counts[k]:
                shards[k].append(idx[start[k] : stop[k]])

    parts = [
        np.sort(np.concatenate(s)) if s else np.empty(0, dtype=np.int64)
        for s in shards
    ]
    # Repair empty clients one at a time, always taking from the largest shard.
    while True:
        sizes = np.array([p.size for p in parts])
        empty = np.where(sizes == 0)[0]
        if empty.size == 0:
            break
        donor = int(np.argmax(sizes))
        if sizes[donor] <= 1:
            raise ConfigError("not enough samples to give every client one")
        k = int(empty[0])
        parts[k] = parts[donor][-1:]
        parts[donor] = parts[donor][:-1]
    return Partition(tuple(parts))


def split_many_medium_few(counts: Array, many_min: int, few_max: int) -> dict[str, Array]:
    """Group class indices by training-set size.

    many: count > many_min; few: count < few_max; medium: the rest,
    boundaries included.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if not many_min > few_max > 0:
        raise ConfigError(
            f"group thresholds must satisfy many_min > few_max > 0, "
            f"got ({many_min}, {few_max})"
        )
    c = np.arange(counts.shape[0])
    return {
        "many": c[counts > many_min],
        "medium": c[(counts <= many_min) & (counts >= few_max)],
        "few": c[counts < few_max],
    }


def synth_blobs(
    num_classes: int,
    input_dim: int,
    per_class,
    spread: float,
    separation: float,
    seed: int,
    id_offset: int = 0,
) -> LabeledDataset:
    """Gaussian blob classes on a shared seed: centers first, then samples.

    Class centers are seeded random unit vectors scaled by separation;
    samples add spread-scaled isotropic noise.  per_class is one count for
    all classes or a per-class count vector.  id_offset shifts the assigned
    sample ids so multiple draws can coexist.
    """
    if num_classes < 1 or input_dim < 1:
        raise ConfigError("num_classes and input_dim must be >= 1")
    per_class = np.broadcast_to(
        np.asarray(per_class, dtype=np.int64), (num_classes,)
    ).copy()
    if np.any(per_class < 0):
        raise ConfigError("per_class counts must be >= 0")
    if spread < 0 or separation < 0:
        raise ConfigError("spread and separation must be >= 0")
    g_centers = rngs.generator(seed, rngs.DATASET, 0)
    raw = g_centers.normal(size=(num_classes, input_dim))
    centers = separation * raw / np.linalg.norm(raw, axis=1, keepdims=True)
    g_samples = rngs.generator(seed, rngs.DATASET, 1)
    xs, ys = [], []
    for c in range(num_classes):
        n = int(per_class[c])
        xs.append(centers[c] + spread * g_samples.normal(size=(n, input_dim)))
        ys.append(np.full(n, c, dtype=np.int64))
    total = int(per_class.sum())
    names = tuple(f"class_{c}" for c in range(num_classes))
    return LabeledDataset(
        np.concatenate(xs) if xs else np.empty((0, input_dim)),
        np.concatenate(ys) if ys else np.empty(0, dtype=np.int64),
        names,
        np.arange(id_offset, id_offset + total, dtype=np.int64),
    )


def blob_benchmark(
    num_classes: int,
    input_dim: int,
    n_max: int,
    imbalance: float,
    n_test_per_class: int,
    spread: float,
    separation: float,
    seed: int,
) -> tuple[LabeledDataset, LabeledDataset, Array]:
    """Long-tailed blob training set plus a balanced test set on shared centers.

    One oversized draw per class is split into a long-tailed training slice
    and a balanced test slice, so both sides see the same class geometry.
    Returns (train, test, train_counts).
    """
    counts = make_longtail_counts(num_classes, n_max, imbalance)
    full = synth_blobs(
        num_classes, input_dim, counts + n_test_per_class, spread, separation, seed
    )
    train_idx, test_idx = [], []
    for c in range(num_classes):
        idx = np.where(full.labels == c)[0]
        train_idx.append(idx[: counts[c]])
        test_idx.append(idx[counts[c] :])
    train = full.take(np.concatenate(train_idx))
    test = full.take(np.concatenate(test_idx))
    return train, test, counts


def load_dataset_dir(path: str | Path) -> LabeledDataset:
    """Read a dataset directory: manifest.json, data.f32, labels.u32.

    The manifest carries input_dim, num_classes, and class_names.  data.f32
    holds row-major little-endian float32 samples; labels.u32 holds one
    little-endian uint32 label per sample.
    """
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise FormatError(f"missing manifest: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"manifest is not valid JSON: {e}") from e
    for key in ("input_dim", "num_classes", "class_names"):
        if key not in manifest:
            raise FormatError(f"manifest missing key {key!r}")
    input_dim = manifest["input_dim"]
    num_classes = manifest["num_classes"]
    class_names = manifest["class_names"]
    if not isinstance(input_dim, int) or input_dim < 1:
        raise FormatError(f"input_dim must be a positive integer, got {input_dim!r}")
    if not isinstance(num_classes, int) or num_classes < 1:
        raise FormatError(f"num_classes must be a positive integer, got {num_classes!r}")
    if (
        not isinstance(class_names, list)
        or len(class_names) != num_classes
        or not all(isinstance(n, str) for n in class_names)
    ):
        raise FormatError("class_names must list one string per class")

    data_path = root / "data.f32"
    labels_path = root / "labels.u32"
    for p in (data_path, labels_path):
        if not p.is_file():
            raise FormatError(f"missing data file: {p}")
    raw = np.fromfile(data_path, dtype="<f4")
    if raw.size % input_dim:
        raise FormatError(
            f"data.f32 holds {raw.size} floats, not a multiple of input_dim {input_dim}"
        )
    n = raw.size // input_dim
    labels = np.fromfile(labels_path, dtype="<u4")
    if labels.shape != (n,):
        raise FormatError(f"labels.u32 holds {labels.size} labels for {n} samples")
    if n and labels.max() >= num_classes:
        raise FormatError(f"label {labels.max()} out of range for {num_classes} classes")
    return LabeledDataset(
        raw.reshape(n, input_dim).astype(np.float64),
        labels.astype(np.int64),
        tuple(class_names),
        np.arange(n, dtype=np.int64),
    )


def save_dataset_dir(path: str | Path, data: LabeledDataset) -> None:
    """Write a dataset directory in the import format read by load_dataset_dir."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "input_dim": data.input_dim,
        "num_classes": data.num_classes,
        "class_names": list(data.class_names),
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    data.samples.astype("<f4").tofile(root / "data.f32")
    data.labels.astype("<u4").tofile(root / "labels.u32")
