"""Dataset ingestion, preprocessing, task splitting, and synthetic suites.

Loaders validate file structure before allocating: MNIST ships as IDX files
(big-endian magic + dimension fields, then raw unsigned bytes), CIFAR-10 as
fixed 3073-byte records (label byte followed by a channel-planar RGB image).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateInputError, FormatError, InvalidInputError
from .merge import TaskBatch
from .rates import LabelAssignment

__all__ = [
    "RawDataset",
    "KernelBank",
    "TaskSplit",
    "load_idx",
    "load_cifar_binary",
    "preprocess_mnist",
    "preprocess_cifar",
    "split_tasks",
    "synth_subspace_mixture",
    "subsample_per_class",
    "downscale_images",
]

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 3073
KERNEL_PRNG = "numpy:PCG64"


@dataclass
class RawDataset:
    """Unprocessed images (n, H, W, C) of unsigned bytes plus integer labels."""

    images: np.ndarray
    labels: np.ndarray
    name: str

    @property
    def n(self) -> int:
        return int(self.images.shape[0])


def _read_be_u32(buf: bytes, offset: int, path: Path) -> int:
    if offset + 4 > len(buf):
        raise FormatError(f"{path}: truncated header at offset {offset}")
    return struct.unpack_from(">I", buf, offset)[0]


def load_idx(images_path, labels_path) -> RawDataset:
    """Load an IDX image/label file pair (the MNIST distribution format)."""
    images_path, labels_path = Path(images_path), Path(labels_path)

    buf = images_path.read_bytes()
    magic = _read_be_u32(buf, 0, images_path)
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(
            f"{images_path}: bad magic 0x{magic:08x} at offset 0, "
            f"expected 0x{IDX_IMAGE_MAGIC:08x}"
        )
    n = _read_be_u32(buf, 4, images_path)
    rows = _read_be_u32(buf, 8, images_path)
    cols = _read_be_u32(buf, 12, images_path)
    expected = 16 + n * rows * cols
    if len(buf) != expected:
        raise FormatError(
            f"{images_path}: payload is {len(buf)} bytes, expected {expected} "
            f"(truncation detected at offset {min(len(buf), expected)})"
        )
    images = np.frombuffer(buf, dtype=np.uint8, offset=16).reshape(n, rows, cols, 1)

    buf = labels_path.read_bytes()
    magic = _read_be_u32(buf, 0, labels_path)
    if magic != IDX_LABEL_MAGIC:
        raise FormatError(
            f"{labels_path}: bad magic 0x{magic:08x} at offset 0, "
            f"expected 0x{IDX_LABEL_MAGIC:08x}"
        )
    n_labels = _read_be_u32(buf, 4, labels_path)
    expected = 8 + n_labels
    if len(buf) != expected:
        raise FormatError(
            f"{labels_path}: payload is {len(buf)} bytes, expected {expected} "
            f"(truncation detected at offset {min(len(buf), expected)})"
        )
    labels = np.frombuffer(buf, dtype=np.uint8, offset=8).astype(np.int64)

    if n != n_labels:
        raise FormatError(
            f"image count {n} does not match label count {n_labels}"
        )
    if n == 0:
        raise FormatError(f"{images_path}: empty dataset")
    if labels.max(initial=0) > 9:
        bad = int(np.argmax(labels > 9))
        raise FormatError(
            f"{labels_path}: label {labels[bad]} at record {bad} outside 0-9"
        )
    return RawDataset(images=images.copy(), labels=labels, name="mnist")


def load_cifar_binary(paths: Sequence) -> RawDataset:
    """Load CIFAR-10 binary batches, concatenated in the given file order."""
    if not paths:
        raise InvalidInputError("no CIFAR batch files given")
    all_images, all_labels = [], []
    for p in map(Path, paths):
        buf = p.read_bytes()
        if len(buf) == 0 or len(buf) % CIFAR_RECORD_BYTES != 0:
            raise FormatError(
                f"{p}: size {len(buf)} is not a positive multiple of "
                f"{CIFAR_RECORD_BYTES}-byte records"
            )
        records = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        labels = records[:, 0].astype(np.int64)
        if labels.max() > 9:
            bad = int(np.argmax(labels > 9))
            raise FormatError(f"{p}: label {labels[bad]} at record {bad} outside 0-9")
        # channel-planar RGB -> (n, 32, 32, 3)
        images = records[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
        all_images.append(images)
        all_labels.append(labels)
    return RawDataset(
        images=np.concatenate(all_images),
        labels=np.concatenate(all_labels),
        name="cifar10",
    )


def preprocess_mnist(raw: RawDataset) -> tuple[np.ndarray, LabelAssignment]:
    """Flatten 28x28 images into columns of a 784 x n matrix, scaled to [0, 1]."""
    if raw.images.shape[1:] != (28, 28, 1):
        raise InvalidInputError(
            f"expected 28x28x1 images, got {raw.images.shape[1:]}"
        )
    X = raw.images.reshape(raw.n, 784).T.astype(np.float64) / 255.0
    return X, LabelAssignment(raw.labels)


@dataclass
class KernelBank:
    """Random lifting filters: ``num`` kernels of ``size x size`` per channel."""

    kernels: np.ndarray  # (num, size, size, channels)
    seed: int

    @classmethod
    def generate(
        cls, seed: int, num_kernels: int = 5, size: int = 3, channels: int = 3
    ) -> "KernelBank":
        if size % 2 == 0:
            raise InvalidInputError("kernel size must be odd to preserve image size")
        rng = np.random.default_rng(seed)
        kernels = rng.standard_normal((num_kernels, size, size, channels))
        return cls(kernels=kernels, seed=seed)

    @property
    def num(self) -> int:
        return int(self.kernels.shape[0])


def downscale_images(images: np.ndarray, factor: int) -> np.ndarray:
    """Block-mean pooling of (n, H, W, C) images by an integer factor."""
    if factor == 1:
        return images
    n, h, w, c = images.shape
    if h % factor or w % factor:
        raise InvalidInputError(f"image size {h}x{w} not divisible by {factor}")
    return images.reshape(n, h // factor, factor, w // factor, factor, c).mean(axis=(2, 4))


def _lift(images: np.ndarray, bank: KernelBank) -> np.ndarray:
    """Stride-1 sliding dot products with zero padding; channels are summed.

    Output keeps the spatial size, with one channel per kernel (kernels are
    applied unflipped, i.e. as cross-correlations).
    """
    n, h, w, c = images.shape
    knum, ksize, _, kchan = bank.kernels.shape
    if kchan != c:
        raise InvalidInputError(f"kernel bank expects {kchan} channels, images have {c}")
    pad = ksize // 2
    padded = np.pad(images, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    windows = sliding_window_view(padded, (ksize, ksize), axis=(1, 2))
    # windows: (n, h, w, c, ksize, ksize); kernels: (knum, ksize, ksize, c)
    return np.einsum("nijcab,kabc->nijk", windows, bank.kernels)


def preprocess_cifar(
    raw: RawDataset,
    bank: KernelBank,
    train_mean: np.ndarray | None = None,
    downscale: int = 1,
) -> tuple[np.ndarray, LabelAssignment, np.ndarray]:
    """Scale, mean-subtract, lift with the kernel bank, and flatten.

    The mean image is computed here when ``train_mean`` is None (training
    data) and must be supplied for test data.  Returns the feature matrix of
    shape (H*W*num_kernels) x n, the labels, and the mean image used.
    """
    if raw.images.ndim != 4 or raw.images.shape[3] != bank.kernels.shape[3]:
        raise InvalidInputError(
            f"expected images with {bank.kernels.shape[3]} channels, got shape {raw.images.shape}"
        )
    imgs = downscale_images(raw.images.astype(np.float64) / 255.0, downscale)
    if train_mean is None:
        mean = imgs.mean(axis=0)
    else:
        mean = np.asarray(train_mean, dtype=np.float64)
        if mean.shape != imgs.shape[1:]:
            raise InvalidInputError(
                f"mean image has shape {mean.shape}, expected {imgs.shape[1:]}"
            )
    imgs = imgs - mean
    lifted = _lift(imgs, bank)
    X = lifted.reshape(raw.n, -1).T.copy()
    return X, LabelAssignment(raw.labels), mean


@dataclass
class TaskSplit:
    """Ordered class-disjoint tasks covering the requested classes."""

    tasks: list[TaskBatch]
    classes_per_task: int


def split_tasks(
    X,
    labels: LabelAssignment,
    classes_per_task: int,
    class_order: Sequence | None = None,
) -> TaskSplit:
    """Group classes into consecutive tasks of ``classes_per_task`` each.

    ``class_order`` defaults to the label registry; samples keep their
    original relative order inside each task.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != labels.m:
        raise InvalidInputError("X must be d x m with one column per label")
    if class_order is None:
        class_order = list(labels.registry)
    else:
        class_order = [LabelAssignment._normalize_id(c) for c in class_order]
        if sorted(map(str, class_order)) != sorted(map(str, labels.registry)):
            raise InvalidInputError("class_order must be a permutation of the registry")
    if classes_per_task < 1 or len(class_order) % classes_per_task != 0:
        raise InvalidInputError(
            f"{len(class_order)} classes cannot be split into groups of {classes_per_task}"
        )
    tasks = []
    for start in range(0, len(class_order), classes_per_task):
        group = class_order[start : start + classes_per_task]
        members = set(group)
        idx = np.array([i for i, v in enumerate(labels.labels) if v in members], dtype=np.intp)
        tasks.append(TaskBatch(X=X[:, idx], labels=labels.subset(idx, registry=group)))
    return TaskSplit(tasks=tasks, classes_per_task=classes_per_task)


def synth_subspace_mixture(
    dim: int,
    k: int,
    subspace_rank: int,
    per_class: int,
    noise: float,
    seed: int,
) -> tuple[np.ndarray, LabelAssignment]:
    """Samples from k mutually orthogonal random subspaces plus isotropic noise.

    Class ``j`` occupies ``subspace_rank`` dimensions of one orthonormal frame
    drawn from the seed, so distinct classes are exactly orthogonal at
    ``noise=0``.  Columns are grouped by class (labels 0..k-1).
    """
    if k * subspace_rank > dim:
        raise InvalidInputError(
            f"{k} classes of rank {subspace_rank} do not fit in dimension {dim}"
        )
    if per_class < 1 or noise < 0:
        raise InvalidInputError("per_class must be >= 1 and noise >= 0")
    rng = np.random.default_rng(seed)
    frame, _ = np.linalg.qr(rng.standard_normal((dim, k * subspace_rank)))
    blocks, labels = [], []
    for j in range(k):
        basis = frame[:, j * subspace_rank : (j + 1) * subspace_rank]
        coeffs = rng.standard_normal((subspace_rank, per_class))
        block = basis @ coeffs
        if noise > 0:
            block = block + noise * rng.standard_normal((dim, per_class))
        blocks.append(block)
        labels.extend([j] * per_class)
    return np.hstack(blocks), LabelAssignment(labels)


def subsample_per_class(
    X,
    labels: LabelAssignment,
    cap: int,
    seed: int,
) -> tuple[np.ndarray, LabelAssignment]:
    """Keep at most ``cap`` seeded random samples per class, in original order."""
    if cap < 1:
        raise InvalidInputError("cap must be >= 1")
    X = np.asarray(X, dtype=np.float64)
    rng = np.random.default_rng(seed)
    keep = []
    for idx in labels.indices_by_class:
        if idx.size <= cap:
            keep.append(idx)
        else:
            keep.append(np.sort(rng.choice(idx, size=cap, replace=False)))
    order = np.sort(np.concatenate(keep))
    if order.size == 0:
        raise DegenerateInputError("subsampling removed all columns")
    return X[:, order], labels.subset(order, registry=labels.registry)
