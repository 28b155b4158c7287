"""Dataset loading (IDX files), synthetic blobs and deterministic batching."""
from __future__ import annotations

import gzip
import hashlib
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
DATA_DIR_ENV = "AUTOSPARSE_DATA_DIR"


class IdxFormatError(ValueError):
    pass


@dataclass
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ValueError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels outside [0, {self.num_classes})")
        if not np.all(np.isfinite(self.inputs)):
            raise ValueError("inputs contain non-finite values")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx, split=None):
        return LabeledDataset(self.inputs[idx], self.labels[idx], self.num_classes,
                              split or self.split, dict(self.meta))

    def summary(self):
        """Count, input shape and a SHA-256 over inputs and labels."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.inputs).tobytes())
        h.update(np.ascontiguousarray(self.labels.astype(np.int64)).tobytes())
        return {"count": len(self), "shape": list(self.inputs.shape[1:]), "sha256": h.hexdigest()}


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_idx(path, expected_magic, what):
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 8:
        raise IdxFormatError(f"{what} file {path}: header truncated ({len(raw)} bytes)")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxFormatError(f"{what} file {path}: bad magic 0x{magic:08x}, "
                             f"expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise IdxFormatError(f"{what} file {path}: dimension header truncated")
    dims = struct.unpack(">" + "I" * ndim, raw[4:head])
    n_bytes = int(np.prod(dims))
    if len(raw) - head < n_bytes:
        raise IdxFormatError(f"{what} file {path}: payload truncated, "
                             f"need {n_bytes} bytes, have {len(raw) - head}")
    return np.frombuffer(raw, dtype=np.uint8, count=n_bytes, offset=head).reshape(dims)


def load_idx(images_path, labels_path, num_classes=10, split="train") -> LabeledDataset:
    """Load an IDX image/label pair (optionally gzipped); pixels are scaled to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, "images")
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, "labels")
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    if labels.size and labels.max() >= num_classes:
        raise IdxFormatError(f"labels: value {labels.max()} >= num_classes {num_classes}")
    x = images.astype(np.float32) / np.float32(255.0)
    return LabeledDataset(x, labels.astype(np.int64), num_classes, split,
                          {"source": str(images_path), "normalization": "divide_by_255"})


def save_idx(images_path, labels_path, images, labels):
    """Write uint8 images (N, H, W) and labels (N,) as IDX; ``.gz`` paths are gzipped."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    for path, arr, magic in ((images_path, images, IDX_IMAGES_MAGIC),
                             (labels_path, labels, IDX_LABELS_MAGIC)):
        magic = (magic & ~0xFF) | arr.ndim
        body = struct.pack(">I", magic) + struct.pack(">" + "I" * arr.ndim, *arr.shape) + arr.tobytes()
        opener = gzip.open if str(path).endswith(".gz") else open
        with opener(path, "wb") as f:
            f.write(body)


def default_data_dir():
    return Path(os.environ.get(DATA_DIR_ENV, "data"))


def synth_gaussian_blobs(num_classes, dims, per_class, seed=0, scale=6.0, split="train"):
    """Isotropic unit-variance blobs centred on ``scale`` times the basis vectors."""
    if num_classes < 1 or dims < 1 or per_class < 1:
        raise ValueError("num_classes, dims and per_class must be positive")
    if num_classes > dims:
        raise ValueError(f"need dims >= num_classes for simplex means, got {dims} < {num_classes}")
    rng = np.random.default_rng(seed)
    means = scale * np.eye(dims)[:num_classes]
    x = np.concatenate([rng.normal(means[k], 1.0, size=(per_class, dims)) for k in range(num_classes)])
    y = np.repeat(np.arange(num_classes), per_class)
    return LabeledDataset(x.astype(np.float32), y.astype(np.int64), num_classes, split,
                          {"source": "gaussian_blobs", "seed": seed, "scale": scale,
                           "means": means.tolist(), "normalization": "none"})


def batches(dataset: LabeledDataset, batch_size, seed, epoch):
    """Shuffled index batches; the permutation depends only on (seed, epoch)."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    perm = np.random.default_rng([seed, epoch]).permutation(len(dataset))
    return [perm[i:i + batch_size] for i in range(0, len(perm), batch_size)]
