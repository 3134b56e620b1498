"""Datasets, IDX files, class partitions, splitting and balancing."""
from __future__ import annotations

import gzip
import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxError(ValueError):
    pass


@dataclass
class Dataset:
    """N grayscale HxW samples in [0, 1] with optional integer labels."""

    id: str
    samples: np.ndarray
    labels: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 3:
            raise ValueError(f"{self.id}: samples must be (N, H, W), got shape {self.samples.shape}")
        if self.samples.size and (self.samples.min() < 0 or self.samples.max() > 1 or
                                  not np.all(np.isfinite(self.samples))):
            raise ValueError(f"{self.id}: pixel values must lie in [0, 1]")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.samples),):
                raise ValueError(f"{self.id}: need one label per sample")
            if self.labels.size and self.labels.min() < 0:
                raise ValueError(f"{self.id}: labels must be non-negative")

    def __len__(self):
        return len(self.samples)

    @property
    def shape(self):
        return self.samples.shape[1:]

    @property
    def classes(self) -> list[int]:
        if self.labels is None:
            return []
        return sorted(int(c) for c in np.unique(self.labels))

    @property
    def num_classes(self) -> int:
        return 0 if self.labels is None or not len(self.labels) else int(self.labels.max()) + 1

    def subset(self, indices, id: str | None = None, **provenance) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        labels = None if self.labels is None else self.labels[indices]
        prov = {"parent": self.id, **provenance} if provenance else {"parent": self.id}
        return Dataset(id or self.id, self.samples[indices], labels, prov)

    def select_classes(self, classes, id: str | None = None, relabel: bool = False) -> "Dataset":
        classes = [int(c) for c in classes]
        mask = np.isin(self.labels, classes)
        out = self.subset(np.flatnonzero(mask), id=id, classes=classes)
        if relabel:
            mapping = {c: i for i, c in enumerate(classes)}
            out.labels = np.array([mapping[int(c)] for c in out.labels], dtype=np.int64)
        return out

    def partition(self) -> dict[int, np.ndarray]:
        """Class index -> sample indices (the per-class sets)."""
        if self.labels is None:
            raise ValueError(f"{self.id}: dataset has no labels")
        return {c: np.flatnonzero(self.labels == c) for c in self.classes}

    def class_datasets(self, prefix: str | None = None) -> dict[str, "Dataset"]:
        prefix = self.id if prefix is None else prefix
        return {f"{prefix}:{c}": self.subset(idx, id=f"{prefix}:{c}", cls=c)
                for c, idx in self.partition().items()}

    def mean_l2_norm(self) -> float:
        flat = self.samples.reshape(len(self), -1).astype(np.float64)
        return float(np.mean(np.sqrt(np.sum(flat * flat, axis=1))))


def concat(datasets, id: str, relabel: bool = True) -> Dataset:
    """Stack datasets; with ``relabel`` the i-th input becomes class i."""
    samples = np.concatenate([d.samples for d in datasets], axis=0)
    if relabel:
        labels = np.concatenate([np.full(len(d), i, dtype=np.int64) for i, d in enumerate(datasets)])
    elif all(d.labels is not None for d in datasets):
        labels = np.concatenate([d.labels for d in datasets])
    else:
        labels = None
    return Dataset(id, samples, labels, {"concat": [d.id for d in datasets]})


# ------------------------------------------------------------------ IDX

def quantize(pixels) -> np.ndarray:
    """[0, 1] floats to bytes, rounding half up: byte = floor(255 * p + 0.5)."""
    p = np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0)
    return np.floor(p * 255.0 + 0.5).astype(np.uint8)


def _open(path, mode):
    path = Path(path)
    if path.suffix == ".gz":
        # fixed mtime keeps compressed output byte-reproducible
        return gzip.GzipFile(path, mode, mtime=0)
    return open(path, mode)


def _parse_idx(blob: bytes, expect_magic: int, what: str) -> np.ndarray:
    if len(blob) < 4:
        raise IdxError(f"{what}: file too short for a header")
    magic = struct.unpack(">I", blob[:4])[0]
    if magic != expect_magic:
        raise IdxError(f"{what}: bad magic 0x{magic:08x}, expected 0x{expect_magic:08x}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(blob) < head:
        raise IdxError(f"{what}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", blob[4:head])
    count = int(np.prod(dims, dtype=np.int64)) if dims else 1
    if len(blob) - head < count:
        raise IdxError(f"{what}: truncated payload ({len(blob) - head} of {count} bytes)")
    if len(blob) - head > count:
        raise IdxError(f"{what}: {len(blob) - head - count} trailing bytes after payload")
    return np.frombuffer(blob, dtype=np.uint8, count=count, offset=head).reshape(dims)


def parse_idx_images(blob: bytes) -> np.ndarray:
    return _parse_idx(blob, IMAGE_MAGIC, "images")


def parse_idx_labels(blob: bytes) -> np.ndarray:
    return _parse_idx(blob, LABEL_MAGIC, "labels")


def load_idx(images_path, labels_path=None, id: str | None = None) -> Dataset:
    """Read an IDX image file (and optional label file); ``.gz`` is handled transparently."""
    with _open(images_path, "rb") as fh:
        raw = parse_idx_images(fh.read())
    labels = None
    if labels_path is not None:
        with _open(labels_path, "rb") as fh:
            labels = parse_idx_labels(fh.read())
        if len(labels) != len(raw):
            raise IdxError(f"image/label count mismatch: {len(raw)} images, {len(labels)} labels")
    samples = raw.astype(np.float32) / np.float32(255.0)
    prov = {"images": str(images_path)}
    if labels_path is not None:
        prov["labels"] = str(labels_path)
    return Dataset(id or Path(images_path).name, samples, labels, prov)


def idx_bytes(samples=None, labels=None) -> tuple[bytes | None, bytes | None]:
    img = lab = None
    if samples is not None:
        q = quantize(samples)
        n, h, w = q.shape
        img = struct.pack(">IIII", IMAGE_MAGIC, n, h, w) + q.tobytes()
    if labels is not None:
        labels = np.asarray(labels)
        if labels.size and (labels.min() < 0 or labels.max() > 255):
            raise IdxError("labels must fit in one byte")
        lab = struct.pack(">II", LABEL_MAGIC, len(labels)) + labels.astype(np.uint8).tobytes()
    return img, lab


def write_idx(dataset: Dataset, images_path, labels_path=None):
    img, lab = idx_bytes(dataset.samples, dataset.labels if labels_path is not None else None)
    Path(images_path).parent.mkdir(parents=True, exist_ok=True)
    with _open(images_path, "wb") as fh:
        fh.write(img)
    if labels_path is not None:
        if lab is None:
            raise IdxError(f"{dataset.id}: no labels to write")
        with _open(labels_path, "wb") as fh:
            fh.write(lab)


# ------------------------------------------------------ split / balance

def _content_order(dataset: Dataset, indices, seed: int) -> np.ndarray:
    """Order ``indices`` by a seeded digest of each sample's content.

    Selection therefore follows the samples, not their positions: permuting
    the input permutes the output the same way.
    """
    key = struct.pack("<Q", int(seed) & 0xFFFFFFFFFFFFFFFF)
    lab = dataset.labels
    digests = []
    for i in indices:
        h = hashlib.blake2b(dataset.samples[i].tobytes(), digest_size=16, key=key)
        if lab is not None:
            h.update(struct.pack("<q", int(lab[i])))
        digests.append(h.digest())
    order = sorted(range(len(indices)), key=lambda k: digests[k])
    return np.asarray(indices, dtype=np.int64)[order]


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 5 / 6
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError(f"train fraction must be in (0, 1), got {self.train_fraction}")


def split(dataset: Dataset, spec: SplitSpec = SplitSpec()) -> tuple[Dataset, Dataset]:
    """Seeded train/test split, stratified per class when labels exist."""
    if len(dataset) < 2:
        raise ValueError(f"{dataset.id}: need at least 2 samples to split")
    groups = dataset.partition().items() if dataset.labels is not None else [(None, np.arange(len(dataset)))]
    train_idx, test_idx = [], []
    for cls, idx in groups:
        if len(idx) < 2:
            raise ValueError(f"{dataset.id}: class {cls} has fewer than 2 samples")
        ordered = _content_order(dataset, idx, spec.seed)
        n_train = min(max(int(np.floor(len(idx) * spec.train_fraction + 0.5)), 1), len(idx) - 1)
        train_idx.append(ordered[:n_train])
        test_idx.append(ordered[n_train:])
    tr = np.sort(np.concatenate(train_idx))
    te = np.sort(np.concatenate(test_idx))
    return (dataset.subset(tr, id=f"{dataset.id}", split="train", seed=spec.seed),
            dataset.subset(te, id=f"{dataset.id}", split="test", seed=spec.seed))


def balance(datasets, per_class_count: int, seed: int = 0):
    """Trim every class of every dataset to exactly ``per_class_count`` samples.

    Accepts a single Dataset or a sequence; returns the same shape.
    """
    single = isinstance(datasets, Dataset)
    items = [datasets] if single else list(datasets)
    out = []
    for d in items:
        keep = []
        for cls, idx in d.partition().items():
            if len(idx) < per_class_count:
                raise ValueError(f"{d.id}: class {cls} has {len(idx)} samples, "
                                 f"fewer than the requested {per_class_count}")
            keep.append(_content_order(d, idx, seed)[:per_class_count])
        out.append(d.subset(np.sort(np.concatenate(keep)), id=d.id, balanced=per_class_count, seed=seed))
    return out[0] if single else out
