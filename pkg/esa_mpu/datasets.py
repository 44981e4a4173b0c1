"""
Dataset containers, IDX loading/writing, synthetic data and the MPU split.

Source datasets (as loaded from IDX files) keep their raw labels, e.g. MNIST
digits 0-9, and have `class_count=None`. Datasets produced by
`build_mpu_split()` and `synth_gaussian()` use class indices 1..C, the
negative class being C.
"""
import gzip
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

from esa_mpu.exceptions import (
    CapacityError,
    ConfigError,
    DatasetConsistencyError,
    IdxFormatError,
    InvalidPerturbationError,
    InvalidShiftError,
    TruncatedFileError,
)
from esa_mpu.typing import ArrayLike, FloatArray, IntArray

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class ClassPriors:
    """pi_1 .. pi_{C-1}; the negative prior pi_C = 1 - sum(pi) is implied."""
    pi: tuple[float, ...]

    def __post_init__(self):
        pi = tuple(float(p) for p in self.pi)
        object.__setattr__(self, "pi", pi)
        if not pi:
            raise ConfigError("At least one positive class prior is required")
        if any(not np.isfinite(p) or p <= 0 for p in pi):
            raise ConfigError(f"Class priors must be positive, got {pi}")
        if sum(pi) >= 1.0:
            raise ConfigError(f"Class priors must sum to less than 1, got sum {sum(pi)}")

    @property
    def positive_count(self) -> int:
        return len(self.pi)

    @property
    def class_count(self) -> int:
        return len(self.pi) + 1

    @property
    def negative(self) -> float:
        return 1.0 - sum(self.pi)

    @property
    def total_positive(self) -> float:
        return sum(self.pi)

    def as_array(self) -> FloatArray:
        return np.array(self.pi, dtype=np.float64)


@dataclass(frozen=True)
class LabeledDataset:
    features: FloatArray
    labels: IntArray
    class_count: int | None = None

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels).astype(np.int64)
        if features.ndim != 2:
            raise DatasetConsistencyError(f"Features must be a 2-D matrix, got shape {features.shape}")
        if labels.shape != (features.shape[0],):
            raise DatasetConsistencyError(f"Got {labels.shape[0]} labels for {features.shape[0]} rows")
        if self.class_count is not None and labels.size and (labels.min() < 1 or labels.max() > self.class_count):
            raise DatasetConsistencyError(f"Labels must lie in 1..{self.class_count}")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_frequencies(self) -> FloatArray:
        """Frequencies of classes 1..C (requires class_count)."""
        if self.class_count is None:
            raise DatasetConsistencyError("Class frequencies need a dataset with class indices 1..C")
        counts = np.bincount(self.labels, minlength=self.class_count + 1)[1:]
        return counts / max(len(self), 1)

    def subset(self, indices: ArrayLike) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.class_count)


@dataclass(frozen=True)
class MpuDataset:
    positive_sets: tuple[FloatArray, ...]
    unlabeled: FloatArray
    priors: ClassPriors
    # Source labels of classes 1..C, for reporting
    source_classes: tuple[int, ...] | None = None

    def __post_init__(self):
        positive_sets = tuple(np.asarray(s, dtype=np.float64) for s in self.positive_sets)
        unlabeled = np.asarray(self.unlabeled, dtype=np.float64)
        object.__setattr__(self, "positive_sets", positive_sets)
        object.__setattr__(self, "unlabeled", unlabeled)
        if len(positive_sets) != self.priors.positive_count:
            raise ConfigError(
                f"{len(positive_sets)} positive sets but {self.priors.positive_count} class priors"
            )
        dims = {s.shape[1] if s.ndim == 2 else -1 for s in (*positive_sets, unlabeled)}
        if len(dims) != 1 or -1 in dims:
            raise DatasetConsistencyError("All sets must be 2-D matrices with the same feature dimension")
        for idx, positive_set in enumerate(positive_sets):
            if positive_set.shape[0] == 0:
                raise CapacityError(f"Positive set for class {idx + 1} is empty")
        if unlabeled.shape[0] == 0:
            raise CapacityError("Unlabeled set is empty")

    @property
    def class_count(self) -> int:
        return len(self.positive_sets) + 1

    @property
    def dim(self) -> int:
        return self.unlabeled.shape[1]

    @property
    def labeled_counts(self) -> tuple[int, ...]:
        return tuple(s.shape[0] for s in self.positive_sets)

    @property
    def unlabeled_count(self) -> int:
        return self.unlabeled.shape[0]


def _open(path: str | Path) -> BinaryIO:
    if str(path).endswith(".gz"):
        return gzip.open(path, "rb")  # type: ignore
    return open(path, "rb")


def _read_exact(f: BinaryIO, size: int, path: str | Path) -> bytes:
    data = f.read(size)
    if len(data) != size:
        raise TruncatedFileError(f"{path}: expected {size} bytes, got {len(data)}")
    return data


def _read_header(f: BinaryIO, path: str | Path, magic: int) -> int:
    found, = struct.unpack(">I", _read_exact(f, 4, path))
    if found != magic:
        raise IdxFormatError(f"{path}: bad magic number 0x{found:08x}, expected 0x{magic:08x}")
    count, = struct.unpack(">I", _read_exact(f, 4, path))
    return count


def load_idx(images_path: str | Path, labels_path: str | Path) -> LabeledDataset:
    """
    Big-endian IDX pair as distributed for MNIST and friends. Pixels are
    scaled by 1/255 into [0, 1] and each image is flattened to one row.
    """
    with _open(images_path) as f:
        count = _read_header(f, images_path, IDX_IMAGES_MAGIC)
        rows, cols = struct.unpack(">II", _read_exact(f, 8, images_path))
        pixels = np.frombuffer(_read_exact(f, count * rows * cols, images_path), dtype=np.uint8)
    with _open(labels_path) as f:
        label_count = _read_header(f, labels_path, IDX_LABELS_MAGIC)
        labels = np.frombuffer(_read_exact(f, label_count, labels_path), dtype=np.uint8)
    if label_count != count:
        raise DatasetConsistencyError(
            f"{images_path} holds {count} images but {labels_path} holds {label_count} labels"
        )
    logger.info(
        "Loaded IDX dataset",
        extra={"images": str(images_path), "count": count, "shape": (rows, cols)},
    )
    features = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    return LabeledDataset(features=features, labels=labels.astype(np.int64))


def write_idx(
    dataset: LabeledDataset,
    images_path: str | Path,
    labels_path: str | Path,
    image_shape: tuple[int, int] | None = None,
):
    """
    Features are expected in [0, 1] and are quantized to bytes; reloading
    reproduces the quantized features exactly.
    """
    rows, cols = image_shape or (1, dataset.dim)
    if rows * cols != dataset.dim:
        raise DatasetConsistencyError(f"Image shape {rows}x{cols} does not match feature dimension {dataset.dim}")
    if len(dataset) and (dataset.labels.min() < 0 or dataset.labels.max() > 255):
        raise DatasetConsistencyError("IDX labels must fit in one byte")
    pixels = np.clip(np.rint(dataset.features * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, len(dataset), rows, cols))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(dataset)))
        f.write(dataset.labels.astype(np.uint8).tobytes())


def synth_gaussian(
    class_count: int,
    dim: int,
    means: ArrayLike,
    scale: float,
    n_per_class: int,
    seed: int,
) -> LabeledDataset:
    """Isotropic Gaussian blobs, one per class, labels 1..C."""
    centers = np.asarray(means, dtype=np.float64)
    if centers.shape != (class_count, dim):
        raise ConfigError(f"Expected {class_count} means of dimension {dim}, got shape {centers.shape}")
    if len(np.unique(centers, axis=0)) != class_count:
        raise ConfigError("Class means must be distinct")
    if scale <= 0:
        raise ConfigError(f"scale must be positive, got {scale}")
    rng = np.random.default_rng(seed)
    features = np.concatenate([
        center + scale * rng.standard_normal((n_per_class, dim)) for center in centers
    ])
    labels = np.repeat(np.arange(1, class_count + 1), n_per_class)
    return LabeledDataset(features=features, labels=labels, class_count=class_count)


def select_random_classes(labels: ArrayLike, n_positive: int, seed: int) -> tuple[list[int], int]:
    """Random "(R, ..., R), R" selection: distinct positive classes plus one negative."""
    available = np.unique(np.asarray(labels))
    if len(available) < n_positive + 1:
        raise CapacityError(f"Need {n_positive + 1} distinct classes, source has {len(available)}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(available, size=n_positive + 1, replace=False)
    return [int(c) for c in chosen[:-1]], int(chosen[-1])


def _largest_remainder(total: int, weights: FloatArray, minimum: int = 0) -> IntArray:
    """Integer counts summing to `total`, proportional to `weights`."""
    weights = np.asarray(weights, dtype=np.float64) / np.sum(weights)
    counts = np.full(len(weights), minimum, dtype=np.int64)
    remaining = total - counts.sum()
    if remaining < 0:
        raise CapacityError(f"Cannot allocate {total} items with at least {minimum} per group")
    exact = weights * remaining
    counts += np.floor(exact).astype(np.int64)
    leftover = remaining - (counts.sum() - minimum * len(weights))
    order = np.argsort(-(exact - np.floor(exact)), kind="stable")
    counts[order[:leftover]] += 1
    return counts


def build_mpu_split(
    source: LabeledDataset,
    positive_classes: Sequence[int],
    negative_class: int,
    n_labeled: int,
    n_unlabeled: int,
    seed: int,
    n_test: int | None = None,
) -> tuple[MpuDataset, LabeledDataset]:
    """
    Labeled sets come from the positive classes; the unlabeled pool is a
    multinomial draw over all selected classes using their true frequencies
    in the selected subpopulation, which also become the recorded priors.
    Everything left over forms the test set, relabeled 1..C with the
    negative class last.
    """
    selected = [int(c) for c in positive_classes] + [int(negative_class)]
    if len(set(selected)) != len(selected):
        raise ConfigError(f"Positive and negative classes must be distinct, got {selected}")
    present = set(np.unique(source.labels).tolist())
    missing = [c for c in selected if c not in present]
    if missing:
        raise ConfigError(f"Classes {missing} are not present in the source dataset")
    if n_labeled < 1:
        raise CapacityError("At least one labeled example per positive class is required")
    if n_unlabeled < 1:
        raise CapacityError("The unlabeled set must be nonempty")

    rng = np.random.default_rng(seed)
    pools = [rng.permutation(np.flatnonzero(source.labels == c)) for c in selected]
    sizes = np.array([len(pool) for pool in pools], dtype=np.float64)
    frequencies = sizes / sizes.sum()

    labeled_idx = []
    for class_no, pool in enumerate(pools[:-1]):
        if len(pool) < n_labeled:
            raise CapacityError(
                f"Class {selected[class_no]} has {len(pool)} examples, {n_labeled} requested as labeled"
            )
        labeled_idx.append(pool[:n_labeled])
    remaining = [pool[n_labeled:] for pool in pools[:-1]] + [pools[-1]]

    composition = rng.multinomial(n_unlabeled, frequencies)
    unlabeled_idx = []
    test_idx = []
    for class_no, (pool, demand) in enumerate(zip(remaining, composition)):
        if demand > len(pool):
            raise CapacityError(
                f"Class {selected[class_no]} has {len(pool)} examples left, {demand} needed for the unlabeled set"
            )
        unlabeled_idx.append(pool[:demand])
        test_idx.append(pool[demand:])

    unlabeled_all = rng.permutation(np.concatenate(unlabeled_idx))
    test_all = np.concatenate(test_idx)
    test_labels = np.concatenate([
        np.full(len(idx), class_no + 1, dtype=np.int64) for class_no, idx in enumerate(test_idx)
    ])
    order = rng.permutation(len(test_all))
    if n_test is not None:
        order = order[:n_test]
    if len(order) == 0:
        raise CapacityError("No examples left for the test set")

    data = MpuDataset(
        positive_sets=tuple(source.features[idx] for idx in labeled_idx),
        unlabeled=source.features[unlabeled_all],
        priors=ClassPriors(tuple(frequencies[:-1])),
        source_classes=tuple(selected),
    )
    test = LabeledDataset(
        features=source.features[test_all[order]],
        labels=test_labels[order],
        class_count=len(selected),
    )
    logger.info(
        "Built MPU split",
        extra={
            "classes": selected,
            "labeled": data.labeled_counts,
            "unlabeled": data.unlabeled_count,
            "test": len(test),
            "priors": data.priors.pi,
        },
    )
    return data, test


def perturb_priors(priors: ClassPriors, theta: float) -> ClassPriors:
    """theta * pi, deliberately left unnormalized."""
    if not np.isfinite(theta) or theta <= 0:
        raise InvalidPerturbationError(f"theta must be positive, got {theta}")
    perturbed = tuple(theta * p for p in priors.pi)
    if any(p >= 1.0 for p in perturbed) or sum(perturbed) >= 1.0:
        raise InvalidPerturbationError(
            f"theta={theta} gives priors {perturbed} summing to {sum(perturbed):.4g}, which must stay below 1"
        )
    return ClassPriors(perturbed)


def shift_test_distribution(test: LabeledDataset, mu: float, seed: int) -> LabeledDataset:
    """
    Resamples the test set (same size) so that every positive class frequency
    is multiplied by `mu` and the negative class takes up the rest. Classes
    whose demand exceeds their supply are drawn with replacement.
    """
    if test.class_count is None:
        raise InvalidShiftError("Test shift needs a test set with class indices 1..C")
    if not np.isfinite(mu) or mu <= 0:
        raise InvalidShiftError(f"mu must be positive, got {mu}")
    frequencies = test.class_frequencies()
    target = np.append(mu * frequencies[:-1], 0.0)
    if target.sum() >= 1.0:
        raise InvalidShiftError(
            f"mu={mu} scales the positive test frequencies to a total of {target.sum():.4g}, which must stay below 1"
        )
    target[-1] = 1.0 - target[:-1].sum()
    counts = _largest_remainder(len(test), target)
    rng = np.random.default_rng(seed)
    chosen = []
    for class_no, demand in enumerate(counts, start=1):
        pool = np.flatnonzero(test.labels == class_no)
        if demand == 0:
            continue
        if len(pool) == 0:
            raise InvalidShiftError(f"Class {class_no} is absent from the test set but needs {demand} examples")
        chosen.append(rng.choice(pool, size=demand, replace=demand > len(pool)))
    indices = rng.permutation(np.concatenate(chosen))
    return test.subset(indices)
