"""Dataset ingestion, a synthetic confusable-class generator, and batching."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
STREAM_SHUFFLE = 0x5F1
STREAM_SYNTH = 0x5A7
STREAM_SPLIT = 0x5B1
STREAM_AUGMENT = 0xA06


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    num_classes: int
    image_shape: Optional[tuple[int, int]] = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.int64)
        if self.features.ndim != 2:
            raise DataFormatError(f"features must be 2-D, got shape {self.features.shape}")
        if self.targets.shape != (self.features.shape[0],):
            raise DataFormatError(
                f"{self.features.shape[0]} feature rows but {self.targets.shape[0]} targets"
            )
        if self.num_classes < 2:
            raise DataFormatError(f"num_classes must be >= 2, got {self.num_classes}")
        if np.any((self.targets < 0) | (self.targets >= self.num_classes)):
            bad = self.targets[(self.targets < 0) | (self.targets >= self.num_classes)][0]
            raise DataFormatError(f"label {bad} outside [0, {self.num_classes})")
        if not np.all(np.isfinite(self.features)):
            raise DataFormatError("features contain non-finite values")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return Dataset(self.features[index], self.targets[index], self.num_classes, self.image_shape)


@dataclass
class LabeledBatch:
    features: np.ndarray
    targets: np.ndarray
    num_classes: int
    indices: np.ndarray


# --------------------------------------------------------------------------
# IDX
# --------------------------------------------------------------------------


def _read_idx(path, expected_magic: int, what: str) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < 4:
        raise DataFormatError(f"{what}: file too short for magic number ({len(buf)} bytes)")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic != expected_magic:
        raise DataFormatError(f"{what}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise DataFormatError(f"{what}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    count = int(np.prod(dims))
    if len(buf) - header != count:
        raise DataFormatError(
            f"{what}: header dims {dims} need {count} data bytes, file holds {len(buf) - header}"
        )
    return np.frombuffer(buf, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, num_classes: Optional[int] = None) -> Dataset:
    """Read an IDX image/label pair. Pixels are scaled to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, "images")
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, "labels").astype(np.int64)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(f"count: {images.shape[0]} images but {labels.shape[0]} labels")
    if images.shape[0] == 0:
        raise DataFormatError("count: dataset is empty")
    C = int(labels.max()) + 1 if num_classes is None else int(num_classes)
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(features, labels, max(C, 2), (images.shape[1], images.shape[2]))


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as IDX (3-D images or 1-D labels)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    header = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.tobytes())


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def load_csv(path, num_classes: Optional[int] = None) -> Dataset:
    """Read ``label,f0,f1,...`` rows. Feature values are used as given."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if not header or header[0].strip() != "label":
            raise DataFormatError(f"{path}: header must start with 'label', got {header[:1]}")
        width = len(header) - 1
        labels, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width + 1:
                raise DataFormatError(f"{path}:{lineno}: expected {width + 1} fields, got {len(row)}")
            try:
                labels.append(int(row[0]))
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    labels = np.asarray(labels, dtype=np.int64)
    C = int(labels.max()) + 1 if num_classes is None else int(num_classes)
    return Dataset(np.asarray(rows), labels, max(C, 2))


# --------------------------------------------------------------------------
# synthetic confusable classes
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Gaussian class clusters; listed pairs are pulled together.

    Unpaired class centers sit at random directions with norm ``separation``.
    The second member of each superclass pair is placed at distance
    ``separation / (1 + cluster_overlap)`` from the first.
    """

    num_classes: int = 10
    dim: int = 784
    cluster_overlap: float = 1.0
    superclass_pairs: tuple[tuple[int, int], ...] = ((0, 1), (2, 3))
    samples_per_class: int = 500
    seed: int = 0
    separation: float = 4.0
    noise: float = 1.0
    latent_dim: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(
            self, "superclass_pairs", tuple(tuple(int(c) for c in p) for p in self.superclass_pairs)
        )
        if self.cluster_overlap < 0:
            raise ValueError(f"cluster_overlap must be >= 0, got {self.cluster_overlap}")
        if self.num_classes < 2 or self.dim < 1 or self.samples_per_class < 1:
            raise ValueError("num_classes >= 2, dim >= 1 and samples_per_class >= 1 required")
        seen = set()
        for pair in self.superclass_pairs:
            if len(pair) != 2 or pair[0] == pair[1]:
                raise ValueError(f"superclass pair {pair} must name two distinct classes")
            for c in pair:
                if not 0 <= c < self.num_classes:
                    raise ValueError(f"superclass pair {pair} references invalid class {c}")
                if c in seen:
                    raise ValueError(f"class {c} appears in more than one superclass pair")
                seen.add(c)


def class_centers(spec: SynthSpec) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([spec.seed, STREAM_SYNTH, 0])))
    k = spec.latent_dim or spec.dim
    dirs = rng.standard_normal((spec.num_classes, k))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    centers = spec.separation * dirs
    pair_dist = spec.separation / (1.0 + spec.cluster_overlap)
    for a, b in spec.superclass_pairs:
        offset = rng.standard_normal(k)
        offset -= offset @ dirs[a] * dirs[a]
        offset /= np.linalg.norm(offset)
        centers[b] = centers[a] + pair_dist * offset
    return centers


def generate_confusable(spec: SynthSpec) -> Dataset:
    """Draw ``samples_per_class`` points per class, class-interleaved order.

    With ``latent_dim`` set, clusters live in a latent space that is mapped to
    ``dim`` features by a fixed random orthonormal embedding before noise is
    added in the full space.
    """
    centers = class_centers(spec)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([spec.seed, STREAM_SYNTH, 1])))
    n = spec.samples_per_class
    targets = np.tile(np.arange(spec.num_classes), n)
    latent = centers[targets] + spec.noise * rng.standard_normal((len(targets), centers.shape[1]))
    if spec.latent_dim:
        q, _ = np.linalg.qr(rng.standard_normal((spec.dim, spec.latent_dim)))
        features = latent @ q.T + 0.1 * spec.noise * rng.standard_normal((len(targets), spec.dim))
    else:
        features = latent
    return Dataset(features, targets, spec.num_classes)


# --------------------------------------------------------------------------
# splitting, batching, augmentation
# --------------------------------------------------------------------------


def _rng(seed: int, stream: int, counter: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), stream, int(counter)])))


def train_val_split(dataset: Dataset, val_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    order = _rng(seed, STREAM_SPLIT).permutation(len(dataset))
    n_val = int(round(len(dataset) * val_fraction))
    return dataset.subset(np.sort(order[n_val:])), dataset.subset(np.sort(order[:n_val]))


def batches(
    dataset: Dataset, batch_size: int, seed: int = 0, shuffle: bool = True, epoch: int = 0
) -> Iterator[LabeledBatch]:
    """Yield batches in a seed- and epoch-determined order; the last partial batch is kept."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = len(dataset)
    order = _rng(seed, STREAM_SHUFFLE, epoch).permutation(n) if shuffle else np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        yield LabeledBatch(dataset.features[idx], dataset.targets[idx], dataset.num_classes, idx)


@dataclass(frozen=True)
class Augment:
    """Light augmentation: random horizontal flip and additive pixel jitter."""

    flip: bool = False
    jitter: float = 0.0

    @property
    def enabled(self) -> bool:
        return self.flip or self.jitter > 0


def augment(features: np.ndarray, image_shape, aug: Augment, seed: int, epoch: int, step: int) -> np.ndarray:
    if not aug.enabled:
        return features
    rng = _rng(seed, STREAM_AUGMENT, epoch * 1_000_003 + step)
    out = np.array(features, dtype=np.float64)
    if aug.flip:
        if image_shape is None:
            raise ValueError("horizontal flip needs an image shape")
        h, w = image_shape
        imgs = out.reshape(len(out), h, w)
        mask = rng.random(len(out)) < 0.5
        imgs[mask] = imgs[mask, :, ::-1]
        out = imgs.reshape(len(out), h * w)
    if aug.jitter > 0:
        out = np.clip(out + aug.jitter * rng.standard_normal(out.shape), 0.0, 1.0)
    return out
