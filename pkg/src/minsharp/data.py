"""Dataset handling: IDX files, label corruption, synthetic blobs.

The IDX container is the classic big-endian MNIST format: a 32-bit
magic (2051 for images, 2049 for labels), 32-bit dimension counts, then
unsigned bytes.  Pixels are scaled to [0, 1] by 1/255 and flattened
row-major; no further normalization is applied.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .linalg import Rng

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049


class IdxFormatError(ValueError):
    """Malformed IDX payload (bad magic, truncation, count mismatch)."""


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (n x input_dim), integer labels, class count.

    Treated as immutable after construction; transformations return new
    instances and may share the feature array.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got {self.features.shape}")
        n = self.features.shape[0]
        if n < 1:
            raise ValueError("dataset must contain at least one sample")
        if self.labels.shape != (n,):
            raise ValueError(
                f"label count {self.labels.shape} does not match {n} samples"
            )
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if len(self.labels) and (
            self.labels.min() < 0 or self.labels.max() >= self.num_classes
        ):
            raise ValueError(
                f"labels must lie in [0, {self.num_classes}), got range "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices], self.num_classes)

    def fingerprint(self) -> str:
        """Short content hash, embedded in checkpoints and reports."""
        h = hashlib.sha256()
        h.update(self.features.tobytes())
        h.update(self.labels.astype(np.int64).tobytes())
        h.update(struct.pack(">I", self.num_classes))
        return h.hexdigest()[:16]


def _read_header(data: bytes, expected_magic: int, num_dims: int, kind: str):
    header_len = 4 * (1 + num_dims)
    if len(data) < header_len:
        raise IdxFormatError(f"{kind} stream truncated: {len(data)} byte header")
    magic = struct.unpack(">i", data[:4])[0]
    if magic != expected_magic:
        raise IdxFormatError(
            f"wrong magic for {kind} data: got {magic}, expected {expected_magic}"
        )
    dims = struct.unpack(f">{num_dims}i", data[4:header_len])
    return dims, data[header_len:]


def parse_idx_images(data: bytes) -> np.ndarray:
    """Decode an IDX image stream into an (n, rows*cols) matrix in [0, 1]."""
    (n, rows, cols), payload = _read_header(data, IMAGE_MAGIC, 3, "image")
    expected = n * rows * cols
    if len(payload) < expected:
        raise IdxFormatError(
            f"image payload truncated: expected {expected} bytes, got {len(payload)}"
        )
    pixels = np.frombuffer(payload[:expected], dtype=np.uint8)
    return pixels.reshape(n, rows * cols).astype(np.float64) / 255.0


def parse_idx_labels(data: bytes) -> np.ndarray:
    (n,), payload = _read_header(data, LABEL_MAGIC, 1, "label")
    if len(payload) < n:
        raise IdxFormatError(
            f"label payload truncated: expected {n} bytes, got {len(payload)}"
        )
    return np.frombuffer(payload[:n], dtype=np.uint8).astype(np.int64)


def serialize_idx_images(features: np.ndarray, rows: int, cols: int) -> bytes:
    if rows * cols != features.shape[1]:
        raise ValueError(
            f"rows*cols = {rows * cols} does not match feature width "
            f"{features.shape[1]}"
        )
    pixels = np.clip(np.rint(features * 255.0), 0, 255).astype(np.uint8)
    header = struct.pack(">iiii", IMAGE_MAGIC, features.shape[0], rows, cols)
    return header + pixels.tobytes()


def serialize_idx_labels(labels: np.ndarray) -> bytes:
    header = struct.pack(">ii", LABEL_MAGIC, len(labels))
    return header + np.asarray(labels, dtype=np.uint8).tobytes()


def load_idx_dataset(images_path, labels_path, num_classes: int = 10) -> Dataset:
    """Read a paired image/label IDX file set from disk."""
    with open(images_path, "rb") as f:
        features = parse_idx_images(f.read())
    with open(labels_path, "rb") as f:
        labels = parse_idx_labels(f.read())
    if features.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"count mismatch: {features.shape[0]} images vs {labels.shape[0]} labels"
        )
    return Dataset(features, labels, num_classes)


def _corruption_subset(n: int, ratio: float, rng: Rng) -> np.ndarray:
    """Indices of the round(ratio*n) samples selected for relabeling."""
    m = int(round(ratio * n))
    return rng.permutation(n)[:m]


def corrupt_labels(data: Dataset, ratio: float, rng: Rng) -> Dataset:
    """Resample labels of a seeded subset uniformly from [0, K).

    Exactly round(ratio*n) positions are selected; each gets an
    independent uniform label, which may coincide with the original
    (so at ratio 1.0 roughly (K-1)/K of labels actually change).
    Features are shared with the input dataset.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"corruption ratio must be in [0, 1], got {ratio}")
    selected = _corruption_subset(len(data), ratio, rng)
    labels = data.labels.copy()
    if len(selected):
        labels[selected] = rng.integers(0, data.num_classes, size=len(selected))
    return Dataset(data.features, labels, data.num_classes)


def synthetic_blobs(
    n: int, input_dim: int, num_classes: int, separation: float, rng: Rng
) -> Dataset:
    """Gaussian clusters with unit variance, one per class.

    Cluster means sit at separation * (random unit direction); class
    counts are balanced to within one sample and the sample order is
    shuffled.  separation 0 produces pure label noise.
    """
    if num_classes < 2 or n < num_classes:
        raise ValueError(f"need n >= num_classes >= 2, got n={n}, K={num_classes}")
    if input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    if separation < 0:
        raise ValueError("separation must be >= 0")

    directions = rng.normal((num_classes, input_dim))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    means = separation * directions / norms

    counts = np.full(num_classes, n // num_classes)
    counts[: n % num_classes] += 1
    labels = np.repeat(np.arange(num_classes), counts)
    features = means[labels] + rng.normal((n, input_dim))

    order = rng.permutation(n)
    return Dataset(features[order], labels[order], num_classes)
