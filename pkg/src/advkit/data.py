"""Dataset ingestion: MNIST IDX files and CIFAR-10 binary batches.

Both loaders parse the on-disk formats byte-exactly and fail with a
``FormatError`` that names the offending byte offset, so a truncated
download is distinguishable from a wrong file.  Images come back as raw
uint8; ``scale`` maps them onto [0, 1] floats for the models.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ShapeError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes

# Official file names inside a data directory.
MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILE = "test_batch.bin"

OFFICIAL_COUNTS = {"mnist": (60000, 10000), "cifar10": (50000, 10000)}


def _read_exact(fh, count, path, what):
    data = fh.read(count)
    if len(data) != count:
        offset = fh.tell() - len(data)
        raise FormatError(
            f"{path}: truncated while reading {what} at offset {offset} "
            f"(wanted {count} bytes, got {len(data)})"
        )
    return data


def _read_idx(path, expected_magic, expected_rank):
    with open(path, "rb") as fh:
        header = _read_exact(fh, 8, path, "IDX header")
        magic, count = struct.unpack(">II", header)
        if magic != expected_magic:
            raise FormatError(
                f"{path}: bad IDX magic 0x{magic:08x} at offset 0 "
                f"(expected 0x{expected_magic:08x})"
            )
        dims = [count]
        for i in range(expected_rank - 1):
            raw = _read_exact(fh, 4, path, f"dimension {i + 1}")
            dims.append(struct.unpack(">I", raw)[0])
        total = int(np.prod(dims))
        payload = _read_exact(fh, total, path, "pixel payload")
        extra = fh.read(1)
        if extra:
            raise FormatError(
                f"{path}: {len(extra)}+ trailing bytes at offset {fh.tell() - 1}"
            )
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path):
    """Load an MNIST-style IDX image/label file pair.

    Returns ``(images, labels)`` with images as (N, H, W, 1) uint8 and
    labels as (N,) uint8 in 0..9.  Raises ``FormatError`` on bad magic,
    truncation, trailing bytes, or an image/label count mismatch.
    """
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"{images_path}: {images.shape[0]} images but "
            f"{labels_path} holds {labels.shape[0]} labels"
        )
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise FormatError(
            f"{labels_path}: label {labels[bad]} out of range at record {bad}"
        )
    return images[..., np.newaxis], labels


def load_cifar_bin(batch_paths):
    """Load CIFAR-10 binary batches (``data_batch_*.bin`` layout).

    Each record is one label byte followed by 3072 pixel bytes stored
    channel-planar (all red, all green, all blue); the output is
    channel-interleaved (N, 32, 32, 3) uint8.
    """
    if isinstance(batch_paths, (str, bytes, os.PathLike)):
        batch_paths = [batch_paths]
    all_images, all_labels = [], []
    for path in batch_paths:
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) % CIFAR_RECORD_BYTES != 0:
            raise FormatError(
                f"{path}: size {len(blob)} is not a multiple of "
                f"{CIFAR_RECORD_BYTES} (partial record at offset "
                f"{len(blob) - len(blob) % CIFAR_RECORD_BYTES})"
            )
        records = np.frombuffer(blob, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        labels = records[:, 0]
        if labels.size and labels.max() > 9:
            bad = int(np.argmax(labels > 9))
            raise FormatError(
                f"{path}: label {labels[bad]} out of range at record {bad}"
            )
        all_labels.append(labels)
        all_images.append(planar_to_interleaved(records[:, 1:]))
    return np.concatenate(all_images), np.concatenate(all_labels)


def planar_to_interleaved(flat):
    """(N, 3072) channel-planar rows -> (N, 32, 32, 3) interleaved."""
    return flat.reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)


def interleaved_to_planar(images):
    """(N, 32, 32, 3) -> (N, 3072) channel-planar rows; inverse of the above."""
    return images.transpose(0, 3, 1, 2).reshape(images.shape[0], -1)


def scale(raw):
    """Map uint8 pixels 0..255 onto floats in [0, 1] (byte / 255)."""
    arr = np.asarray(raw)
    if arr.dtype != np.uint8:
        raise ShapeError(f"scale expects uint8 pixels, got {arr.dtype}")
    return arr.astype(np.float32) / np.float32(255.0)


@dataclass(frozen=True)
class DatasetSplit:
    """Scaled train/test split with provenance.

    Images are float32 in [0, 1] shaped (N, H, W, C); labels are int64
    class indices 0..9.  ``seed`` records how the separation was made:
    the official split uses seed=None, a reshuffled one stores its seed.
    """

    dataset: str
    train_images: np.ndarray
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        for name in ("train", "test"):
            images = getattr(self, f"{name}_images")
            labels = getattr(self, f"{name}_labels")
            if images.ndim != 4:
                raise ShapeError(f"{name} images must be (N,H,W,C), got {images.shape}")
            if images.shape[0] != labels.shape[0]:
                raise ShapeError(
                    f"{name}: {images.shape[0]} images vs {labels.shape[0]} labels"
                )
            if images.size and (images.min() < 0.0 or images.max() > 1.0):
                raise ShapeError(f"{name} images not scaled to [0,1]")
            if labels.size and (labels.min() < 0 or labels.max() > 9):
                raise ShapeError(f"{name} labels outside 0..9")

    def counts(self):
        return self.train_images.shape[0], self.test_images.shape[0]


def _check_official_counts(split):
    expect = OFFICIAL_COUNTS[split.dataset]
    if split.counts() != expect:
        raise FormatError(
            f"{split.dataset}: split sizes {split.counts()} differ from the "
            f"official {expect}"
        )


def load_mnist(data_dir, strict_counts=True):
    """Assemble the MNIST DatasetSplit from the four official IDX files."""
    paths = {k: os.path.join(data_dir, v) for k, v in MNIST_FILES.items()}
    train_x, train_y = load_idx(paths["train_images"], paths["train_labels"])
    test_x, test_y = load_idx(paths["test_images"], paths["test_labels"])
    split = DatasetSplit(
        dataset="mnist",
        train_images=scale(train_x),
        train_labels=train_y.astype(np.int64),
        test_images=scale(test_x),
        test_labels=test_y.astype(np.int64),
    )
    if strict_counts:
        _check_official_counts(split)
    return split


def load_cifar10(data_dir, strict_counts=True):
    """Assemble the CIFAR-10 DatasetSplit from the six official .bin batches."""
    train_paths = [os.path.join(data_dir, f) for f in CIFAR_TRAIN_FILES]
    train_x, train_y = load_cifar_bin(train_paths)
    test_x, test_y = load_cifar_bin(os.path.join(data_dir, CIFAR_TEST_FILE))
    split = DatasetSplit(
        dataset="cifar10",
        train_images=scale(train_x),
        train_labels=train_y.astype(np.int64),
        test_images=scale(test_x),
        test_labels=test_y.astype(np.int64),
    )
    if strict_counts:
        _check_official_counts(split)
    return split


def load_dataset(dataset, data_dir, strict_counts=True):
    if dataset == "mnist":
        return load_mnist(data_dir, strict_counts)
    if dataset == "cifar10":
        return load_cifar10(data_dir, strict_counts)
    raise ValueError(f"unknown dataset {dataset!r}")


def resplit(split, seed):
    """Re-separate the pooled train+test data with a seeded shuffle.

    Keeps the original split sizes; the same seed always produces the
    same index partition.
    """
    images = np.concatenate([split.train_images, split.test_images])
    labels = np.concatenate([split.train_labels, split.test_labels])
    n_train = split.train_images.shape[0]
    order = np.random.default_rng(np.random.SeedSequence([seed, 0xDA7A])).permutation(
        images.shape[0]
    )
    return DatasetSplit(
        dataset=split.dataset,
        train_images=images[order[:n_train]],
        train_labels=labels[order[:n_train]],
        test_images=images[order[n_train:]],
        test_labels=labels[order[n_train:]],
        seed=seed,
    )
