"""Dataset ingestion: CIFAR-10 binary batches and a seeded synthetic stand-in."""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import DataError

DATA_ENV = "ADAPTJSCC_DATA"

CIFAR_CLASSES = (
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
)
CIFAR_FILES = {
    "train": [f"data_batch_{i}.bin" for i in range(1, 6)],
    "test": ["test_batch.bin"],
}
SYNTHETIC_CLASSES = tuple(f"texture{k}" for k in range(10))
SPLIT_SIZES = {"train": 50000, "test": 10000}
_RECORD = 1 + 3 * 32 * 32
_BATCH_RECORDS = 10000


@dataclass
class DatasetSpec:
    name: str = "cifar10"
    path: str | None = None
    split: str = "train"
    subset: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.name not in ("cifar10", "synthetic"):
            raise DataError(f"unknown dataset {self.name!r} (expected cifar10 or synthetic)")
        if self.split not in SPLIT_SIZES:
            raise DataError(f"unknown split {self.split!r}")
        if self.subset is not None and not 0 < self.subset <= SPLIT_SIZES[self.split]:
            raise DataError(f"subset size {self.subset} outside (0, {SPLIT_SIZES[self.split]}]")


class ImageDataset(torch.utils.data.Dataset):
    """Images ``[N, 3, H, W]`` in [0, 1] (float32) with integer class labels.

    ``labels=None`` marks an unlabelled set; batches then carry ``-1`` labels.
    """

    def __init__(self, images: torch.Tensor, labels: torch.Tensor | None, class_names=CIFAR_CLASSES):
        if labels is not None and images.shape[0] != labels.shape[0]:
            raise DataError("image and label counts differ")
        self.images = images
        self.labels = labels
        self.class_names = tuple(class_names)

    def __len__(self):
        return self.images.shape[0]

    def _labels(self, idx):
        if self.labels is None:
            return torch.full((len(idx),) if torch.is_tensor(idx) else (), -1, dtype=torch.long)
        return self.labels[idx]

    def __getitem__(self, i):
        return self.images[i], self._labels(i)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def batches(self, batch_size: int, shuffle: bool = False, generator: torch.Generator | None = None):
        order = torch.randperm(len(self), generator=generator) if shuffle else torch.arange(len(self))
        for start in range(0, len(self), batch_size):
            idx = order[start:start + batch_size]
            yield self.images[idx], self._labels(idx)


def default_data_dir() -> Path | None:
    value = os.environ.get(DATA_ENV)
    return Path(value) if value else None


def ingest_dataset(spec: DatasetSpec) -> ImageDataset:
    if spec.name == "synthetic":
        n = spec.subset or SPLIT_SIZES[spec.split]
        images, labels = synthetic_images(n, seed=spec.seed, split=spec.split)
        return ImageDataset(torch.from_numpy(images), torch.from_numpy(labels), SYNTHETIC_CLASSES)
    images, labels = read_cifar10(spec.path, spec.split)
    if spec.subset is not None:
        keep = np.random.default_rng(spec.seed).permutation(len(labels))[: spec.subset]
        images, labels = images[keep], labels[keep]
    return ImageDataset(torch.from_numpy(images), torch.from_numpy(labels))


def _locate_cifar(path) -> Path:
    root = Path(path) if path else default_data_dir()
    if root is None:
        raise DataError(f"no CIFAR-10 path given and ${DATA_ENV} is unset")
    for candidate in (root, root / "cifar-10-batches-bin"):
        if (candidate / "test_batch.bin").exists() or (candidate / "data_batch_1.bin").exists():
            return candidate
    raise DataError(f"CIFAR-10 binary batches not found under {root}")


def _verify(directory: Path, name: str, blob: bytes) -> None:
    """Structural check always; md5 check when ``checksums.md5`` lists the file."""
    if len(blob) != _RECORD * _BATCH_RECORDS:
        raise DataError(f"{name}: expected {_RECORD * _BATCH_RECORDS} bytes, found {len(blob)}")
    sums = directory / "checksums.md5"
    if sums.exists():
        expected = {}
        for line in sums.read_text().splitlines():
            parts = line.split()
            if len(parts) == 2:
                expected[parts[1].lstrip("*")] = parts[0].lower()
        if name in expected and hashlib.md5(blob).hexdigest() != expected[name]:
            raise DataError(f"{name}: checksum mismatch")


def read_cifar10(path, split: str) -> tuple[np.ndarray, np.ndarray]:
    directory = _locate_cifar(path)
    images, labels = [], []
    for name in CIFAR_FILES[split]:
        file = directory / name
        if not file.exists():
            raise DataError(f"missing CIFAR-10 file {file}")
        blob = file.read_bytes()
        _verify(directory, name, blob)
        records = np.frombuffer(blob, dtype=np.uint8).reshape(_BATCH_RECORDS, _RECORD)
        lab = records[:, 0].astype(np.int64)
        if lab.max() > 9:
            raise DataError(f"{name}: label out of range, file is corrupt")
        labels.append(lab)
        images.append(records[:, 1:].reshape(-1, 3, 32, 32))
    pixels = np.concatenate(images).astype(np.float32) / 255.0
    return pixels, np.concatenate(labels)


def synthetic_images(n: int, seed: int = 0, split: str = "train", size: int = 32, chunk: int = 500):
    """Seeded natural-looking images whose detail level depends on the label.

    Each image is a Gaussian random field with a ``1/f**slope`` amplitude
    spectrum (the usual natural-image statistic) plus a few flat-coloured
    ellipses. Higher class indices get a flatter spectrum and more shapes,
    so classes differ in how much information they carry.
    """
    split_key = 0 if split == "train" else 1
    rng = np.random.default_rng([seed, split_key])
    n_classes, max_shapes = 10, 6
    # parameters are drawn for the whole split so a subset is always a prefix of it
    total = max(n, SPLIT_SIZES.get(split, n))
    labels = rng.integers(0, n_classes, size=total)[:n]
    field_seeds = rng.integers(0, 2**63 - 1, size=total)[:n]
    mean = rng.uniform(0.25, 0.75, size=(total, 3))[:n]
    contrast = rng.uniform(0.12, 0.22, size=total)[:n]
    centre = rng.uniform(0.1, 0.9, size=(total, max_shapes, 2))[:n]
    radii = rng.uniform(0.06, 0.25, size=(total, max_shapes, 2))[:n]
    shade = rng.uniform(0.05, 0.95, size=(total, max_shapes, 3))[:n]

    complexity = labels / (n_classes - 1)
    slope = 2.6 - 1.2 * complexity
    n_shapes = 1 + np.round(complexity * (max_shapes - 1)).astype(int)

    freq = np.fft.fftfreq(size) * size
    radius = np.hypot(freq[:, None], freq[None, :])
    radius[0, 0] = 1.0
    grid = (np.arange(size) + 0.5) / size
    yy, xx = np.meshgrid(grid, grid, indexing="ij")
    mix = np.array([[1.0, 0.35, 0.0], [1.0, -0.2, 0.3], [1.0, -0.15, -0.35]])  # luma/chroma -> RGB

    out = np.empty((n, 3, size, size), dtype=np.float32)
    for i in range(n):
        g = np.random.default_rng(field_seeds[i])
        spectrum = radius ** (-slope[i])
        spectrum[0, 0] = 0.0
        white = g.normal(size=(3, size, size)) + 1j * g.normal(size=(3, size, size))
        field = np.fft.ifft2(white * spectrum).real
        field /= field.std(axis=(1, 2), keepdims=True) + 1e-12
        field[1:] *= 0.5
        img = mean[i][:, None, None] + contrast[i] * np.einsum("cj,jhw->chw", mix, field)
        for k in range(n_shapes[i]):
            inside = (
                ((yy - centre[i, k, 0]) / radii[i, k, 0]) ** 2 + ((xx - centre[i, k, 1]) / radii[i, k, 1]) ** 2
            ) <= 1.0
            img[:, inside] = 0.6 * shade[i, k][:, None] + 0.4 * img[:, inside]
        out[i] = np.clip(img, 0.0, 1.0)
    return out, labels.astype(np.int64)
