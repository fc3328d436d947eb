"""Datasets: IDX ingestion, synthetic Gaussian blobs and per-satellite partitioning."""

from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

DATA_DIR_ENV = "LEOFL_DATA_DIR"

MNIST_FILES = {
    "train": ("train-images.idx3-ubyte", "train-labels.idx1-ubyte"),
    "test": ("t10k-images.idx3-ubyte", "t10k-labels.idx1-ubyte"),
}


class IdxFormatError(ValueError):
    """Base class for malformed IDX input."""


class MagicNumberError(IdxFormatError):
    pass


class TruncatedFileError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


class LabelRangeError(IdxFormatError):
    pass


class PartitionError(ValueError):
    pass


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be an n x m matrix")
        if len(self.labels) != len(self.features):
            raise ValueError("features and labels disagree on sample count")
        if len(self.labels) == 0:
            raise ValueError("dataset must not be empty")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ValueError(f"labels must lie in [0, {self.class_count})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> "Dataset":
        return Dataset(self.features[index], self.labels[index], self.class_count)


def _read_idx(path, magic: int, ndim: int) -> tuple[tuple[int, ...], np.ndarray]:
    raw = Path(path).read_bytes()
    header_len = 4 + 4 * ndim
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: file shorter than the magic number")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise MagicNumberError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    if len(raw) < header_len:
        raise TruncatedFileError(f"{path}: truncated header")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header_len])
    expected = int(np.prod(dims))
    body = raw[header_len:]
    if len(body) < expected:
        raise TruncatedFileError(f"{path}: expected {expected} data bytes, found {len(body)}")
    return dims, np.frombuffer(body, dtype=np.uint8, count=expected)


def load_idx(images_path, labels_path, class_count: int = 10) -> Dataset:
    """Parse an IDX image/label file pair into a Dataset with features in [0, 1]."""
    (count, rows, cols), pixels = _read_idx(images_path, IMAGES_MAGIC, 3)
    (n_labels,), labels = _read_idx(labels_path, LABELS_MAGIC, 1)
    if count != n_labels:
        raise CountMismatchError(f"{count} images but {n_labels} labels")
    if labels.size and labels.max() >= class_count:
        raise LabelRangeError(f"label {int(labels.max())} outside [0, {class_count})")
    features = pixels.reshape(count, rows * cols).astype(float) / 255.0
    return Dataset(features, labels.astype(np.int64), class_count)


def resolve_data_dir(path=None) -> Path:
    if path:
        return Path(path)
    env = os.environ.get(DATA_DIR_ENV)
    if env:
        return Path(env)
    return Path.home() / "data" / "mnist"


def load_mnist(data_dir=None) -> tuple[Dataset, Dataset]:
    """Load the (train, test) MNIST pair from a directory of raw IDX files."""
    root = resolve_data_dir(data_dir)
    out = []
    for split in ("train", "test"):
        images, labels = (root / name for name in MNIST_FILES[split])
        for p in (images, labels):
            if not p.exists():
                raise FileNotFoundError(f"missing MNIST file {p} (set {DATA_DIR_ENV})")
        out.append(load_idx(images, labels))
    return out[0], out[1]


def standardize(train: Dataset, *others: Dataset, eps: float = 0.001 / 255.0) -> list[Dataset]:
    """Per-feature ``(x - mean) / (std + eps)`` with statistics taken from ``train``.

    The default ``eps`` corresponds to 0.001 on the raw 0..255 byte scale.
    """
    mean = train.features.mean(axis=0)
    scale = train.features.std(axis=0) + eps
    return [Dataset((d.features - mean) / scale, d.labels, d.class_count) for d in (train, *others)]


def synth_dataset(classes: int, per_class: int, dim: int, seed: int, separation: float = 4.0) -> Dataset:
    """Balanced Gaussian blobs with unit variance around random class centers."""
    if min(classes, per_class, dim) < 1:
        raise ValueError("classes, per_class and dim must all be >= 1")
    rng = np.random.default_rng(seed)
    centers = rng.normal(scale=separation, size=(classes, dim))
    labels = np.repeat(np.arange(classes), per_class)
    features = centers[labels] + rng.normal(size=(classes * per_class, dim))
    order = rng.permutation(len(labels))
    return Dataset(features[order], labels[order], classes)


class PartitionMode(str, enum.Enum):
    IID = "iid"
    CLASS_SPLIT = "class_split"


@dataclass
class PartitionSpec:
    mode: PartitionMode = PartitionMode.IID
    # shell id -> class ids held by satellites of that shell (CLASS_SPLIT only)
    assignment: dict[int, list[int]] = field(default_factory=dict)
    rng_seed: int = 0

    def validate(self, class_count: int) -> None:
        if self.mode is not PartitionMode.CLASS_SPLIT:
            return
        seen: list[int] = [c for classes in self.assignment.values() for c in classes]
        if len(seen) != len(set(seen)):
            raise PartitionError("class assignment across shells must be disjoint")
        if sorted(seen) != list(range(class_count)):
            raise PartitionError(f"class assignment must cover all {class_count} classes")


def partition(data: Dataset, satellites, spec: PartitionSpec) -> dict[int, Dataset]:
    """Split ``data`` into equally sized disjoint local datasets.

    ``satellites`` is a sequence of ``(satellite_id, shell_id)`` pairs. Samples
    left over after the equal split are dropped.
    """
    satellites = list(satellites)
    if not satellites:
        return {}
    rng = np.random.default_rng(spec.rng_seed)
    spec.validate(data.class_count)

    if spec.mode is PartitionMode.IID:
        size = len(data) // len(satellites)
        if size == 0:
            raise PartitionError("fewer samples than satellites")
        order = rng.permutation(len(data))
        return {
            sat_id: data.subset(np.sort(order[j * size:(j + 1) * size]))
            for j, (sat_id, _) in enumerate(satellites)
        }

    by_shell: dict[int, list[int]] = {}
    for sat_id, shell in satellites:
        by_shell.setdefault(shell, []).append(sat_id)
    missing = set(by_shell) - set(spec.assignment)
    if missing:
        raise PartitionError(f"no class set assigned to shell(s) {sorted(missing)}")
    empty = set(spec.assignment) - set(by_shell)
    if empty:
        raise PartitionError(f"classes assigned to shell(s) without satellites: {sorted(empty)}")

    pools = {}
    for shell in sorted(by_shell):
        idx = np.flatnonzero(np.isin(data.labels, spec.assignment[shell]))
        pools[shell] = rng.permutation(idx)
    size = min(len(pools[s]) // len(by_shell[s]) for s in by_shell)
    if size == 0:
        raise PartitionError("not enough samples of the assigned classes for every satellite")

    out = {}
    for shell in sorted(by_shell):
        for j, sat_id in enumerate(by_shell[shell]):
            out[sat_id] = data.subset(np.sort(pools[shell][j * size:(j + 1) * size]))
    return {sat_id: out[sat_id] for sat_id, _ in satellites}
