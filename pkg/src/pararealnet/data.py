"""Datasets: MNIST-style IDX files, seeded Gaussian blobs, batching."""

from dataclasses import dataclass
import struct

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxError(ValueError):
    pass


class BadMagicError(IdxError):
    pass


class TruncatedFileError(IdxError):
    pass


class CountMismatchError(IdxError):
    pass


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (n, c, h, w) in [0, 1]
    labels: np.ndarray  # (n,) int64
    class_count: int

    def __post_init__(self):
        if self.images.ndim != 4 or len(self.images) < 1:
            raise ValueError("images must be a non-empty (n, c, h, w) array")
        if self.labels.shape != (len(self.images),):
            raise ValueError("need exactly one label per image")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ValueError(f"labels must lie in [0, {self.class_count})")

    def __len__(self):
        return len(self.labels)

    def subset(self, index):
        index = np.asarray(index)
        return Dataset(self.images[index], self.labels[index], self.class_count)


def _read_idx(path, magic, rank):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: shorter than the IDX header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise BadMagicError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    head = 4 + 4 * rank
    if len(raw) < head:
        raise TruncatedFileError(f"{path}: header cut short")
    dims = struct.unpack(f">{rank}I", raw[4:head])
    size = int(np.prod(dims))
    if len(raw) - head < size:
        raise TruncatedFileError(f"{path}: {len(raw) - head} data bytes, expected {size}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=head).reshape(dims)


def load_idx(images_path, labels_path, class_count=10):
    images = _read_idx(images_path, IMAGE_MAGIC, 3)
    labels = _read_idx(labels_path, LABEL_MAGIC, 1)
    if len(images) != len(labels):
        raise CountMismatchError(f"{len(images)} images but {len(labels)} labels")
    x = images[:, None, :, :].astype(np.float64) / 255.0
    return Dataset(x, labels.astype(np.int64), class_count)


def write_idx(images_path, labels_path, images, labels):
    """Write uint8 images (n, h, w) and labels (n,) as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">I3I", IMAGE_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def synth_blobs(classes, per_class, shape=(2,), separation=4.0, seed=0, noise=1.0):
    """Gaussian clusters, ``per_class`` points each, labels in class order.

    Class means are ``separation / sqrt(2)`` times distinct unit vectors,
    so every pair of means sits exactly ``separation`` apart.  ``shape`` is
    either a feature count per sample or a (c, h, w) image shape; the data
    is always returned as a rank-4 image batch.
    """
    if classes < 2 or per_class < 1:
        raise ValueError("need classes >= 2 and per_class >= 1")
    shape = tuple(shape)
    if len(shape) == 1:
        shape = (shape[0], 1, 1)
    dims = int(np.prod(shape))
    if dims < classes:
        raise ValueError(f"{dims} features cannot hold {classes} orthogonal means")
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((dims, classes)))
    means = basis.T * (separation / np.sqrt(2.0))
    labels = np.repeat(np.arange(classes), per_class)
    x = means[labels] + noise * rng.standard_normal((len(labels), dims))
    return Dataset(x.reshape((len(labels),) + shape), labels, classes)


def batches(dataset, batch_size, shuffle_seed=None):
    """List of ``(images, labels)`` batches; the last one may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(dataset)
    order = np.arange(n) if shuffle_seed is None else np.random.default_rng(shuffle_seed).permutation(n)
    return [(dataset.images[order[i:i + batch_size]], dataset.labels[order[i:i + batch_size]])
            for i in range(0, n, batch_size)]
