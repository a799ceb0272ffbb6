"""
Datasets Module
Image classification datasets for search and evaluation, all returned as
NCHW float64 arrays normalized per channel on the training split.

Sources:
1. synthetic-blobs - Gaussian class prototypes rendered as images, plus noise
2. synthetic-textures - oriented stripe patterns, one orientation per class
3. downsampled-digits - scikit-learn's bundled 8×8 handwritten digits
4. image-folder - one sub-folder of PNG files per class

None of them downloads anything.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Tuple

import matplotlib.image as mpimg
import numpy as np
from sklearn.datasets import load_digits

logger = logging.getLogger(__name__)


@dataclass
class Dataset:
    """
    Attributes:
        name: Source name
        images: (samples, channels, H, W) normalized images
        labels: Integer labels in [0, classes)
        classes: Number of classes
        train_indices, test_indices: Deterministic split of the samples
        mean, std: Per-channel statistics of the training split (pre-normalization)
    """
    name: str
    images: np.ndarray
    labels: np.ndarray
    classes: int
    train_indices: np.ndarray
    test_indices: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    @property
    def channels(self) -> int:
        return self.images.shape[1]

    @property
    def resolution(self) -> Tuple[int, int]:
        return self.images.shape[2], self.images.shape[3]

    def train(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.images[self.train_indices], self.labels[self.train_indices]

    def test(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.images[self.test_indices], self.labels[self.test_indices]

    def __len__(self) -> int:
        return len(self.labels)


# ==================== Generators ====================

def _pixel_grid(resolution: int) -> Tuple[np.ndarray, np.ndarray]:
    coords = (np.arange(resolution) + 0.5) / resolution
    return np.meshgrid(coords, coords, indexing="ij")


def synthetic_blobs(samples: int, classes: int, resolution: int, rng: np.random.Generator,
                    noise: float = 0.35, channels: int = 3) -> Tuple[np.ndarray, np.ndarray]:
    """
    Each class is a colored Gaussian blob at its own position; samples are
    the prototype with a random brightness plus pixel noise.

    Returns:
        (images, labels) before normalization
    """
    ys, xs = _pixel_grid(resolution)
    centers = rng.uniform(0.2, 0.8, size=(classes, 2))
    colors = rng.uniform(0.2, 1.0, size=(classes, channels))
    width = 0.2
    prototypes = np.empty((classes, channels, resolution, resolution))
    for c in range(classes):
        blob = np.exp(-((ys - centers[c, 0]) ** 2 + (xs - centers[c, 1]) ** 2) / (2 * width ** 2))
        prototypes[c] = colors[c][:, None, None] * blob

    labels = np.arange(samples) % classes
    rng.shuffle(labels)
    brightness = rng.uniform(0.8, 1.2, size=(samples, 1, 1, 1))
    images = prototypes[labels] * brightness + noise * rng.standard_normal((samples, channels, resolution, resolution))
    return images, labels.astype(np.int64)


def synthetic_textures(samples: int, classes: int, resolution: int, rng: np.random.Generator,
                       noise: float = 0.35, channels: int = 3) -> Tuple[np.ndarray, np.ndarray]:
    """
    Class c is a sinusoidal stripe pattern at angle π·c/classes with a
    random phase per sample, so classes differ only in orientation.
    """
    ys, xs = _pixel_grid(resolution)
    labels = np.arange(samples) % classes
    rng.shuffle(labels)
    frequency = max(1.0, resolution / 4)
    angles = math.pi * labels / classes
    phases = rng.uniform(0, 2 * math.pi, size=samples)
    projection = np.cos(angles)[:, None, None] * xs + np.sin(angles)[:, None, None] * ys
    pattern = np.sin(2 * math.pi * frequency * projection + phases[:, None, None])
    images = np.repeat(pattern[:, None], channels, axis=1)
    images = images + noise * rng.standard_normal(images.shape)
    return images, labels.astype(np.int64)


def _interpolation_matrix(size_in: int, size_out: int) -> np.ndarray:
    """Rows of linear-interpolation weights mapping size_in samples to size_out."""
    positions = (np.arange(size_out) + 0.5) * size_in / size_out - 0.5
    positions = np.clip(positions, 0, size_in - 1)
    lower = np.floor(positions).astype(int)
    upper = np.minimum(lower + 1, size_in - 1)
    frac = positions - lower
    matrix = np.zeros((size_out, size_in))
    matrix[np.arange(size_out), lower] += 1 - frac
    matrix[np.arange(size_out), upper] += frac
    return matrix


def resample(images: np.ndarray, resolution: int) -> np.ndarray:
    """Bilinear resampling of (..., H, W) images to resolution × resolution."""
    rows = _interpolation_matrix(images.shape[-2], resolution)
    cols = _interpolation_matrix(images.shape[-1], resolution)
    return np.einsum("ih,...hw,jw->...ij", rows, images, cols)


def downsampled_digits(samples: int, resolution: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Up to `samples` images of scikit-learn's digits, resampled to the
    requested resolution, one channel, 10 classes.
    """
    digits = load_digits()
    chosen = rng.permutation(len(digits.target))[:samples]
    images = digits.images[chosen].astype(np.float64) / 16.0
    if images.shape[-1] != resolution:
        images = resample(images, resolution)
    return images[:, None], digits.target[chosen].astype(np.int64)


def image_folder(root: Path, resolution: int) -> Tuple[np.ndarray, np.ndarray, int]:
    """
    Load root/<class name>/*.png; classes are the sorted sub-folder names.

    Returns:
        (images, labels, classes)

    Raises:
        FileNotFoundError: If root does not exist
        ValueError: If fewer than 2 classes or no images are found
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"image folder not found: {root}")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if len(class_dirs) < 2:
        raise ValueError(f"{root} needs at least 2 class sub-folders, found {len(class_dirs)}")

    images, labels = [], []
    for label, class_dir in enumerate(class_dirs):
        for path in sorted(class_dir.glob("*.png")):
            pixels = np.asarray(mpimg.imread(path), dtype=np.float64)
            if pixels.ndim == 2:
                pixels = np.repeat(pixels[:, :, None], 3, axis=2)
            pixels = pixels[:, :, :3]
            images.append(resample(pixels.transpose(2, 0, 1), resolution))
            labels.append(label)
        logger.debug(f"Class {label} ({class_dir.name}): {labels.count(label)} images")
    if not images:
        raise ValueError(f"no PNG images found under {root}")
    return np.stack(images), np.asarray(labels, dtype=np.int64), len(class_dirs)


# ==================== Assembly ====================

def split_indices(samples: int, train_fraction: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Deterministic train/test split: the first round(fraction·n) samples of a
    seeded permutation train, the rest test.
    """
    order = rng.permutation(samples)
    cut = min(samples, max(1, int(round(train_fraction * samples))))
    return np.sort(order[:cut]), np.sort(order[cut:])


def make_dataset(name: str, images: np.ndarray, labels: np.ndarray, classes: int, train_fraction: float,
                 rng: np.random.Generator) -> Dataset:
    """Split, then normalize every channel with training-split statistics."""
    if labels.min() < 0 or labels.max() >= classes:
        raise ValueError(f"labels must lie in [0, {classes}), got range [{labels.min()}, {labels.max()}]")
    train_idx, test_idx = split_indices(len(labels), train_fraction, rng)
    train = images[train_idx]
    mean = train.mean(axis=(0, 2, 3))
    std = train.std(axis=(0, 2, 3))
    std = np.where(std > 1e-8, std, 1.0)
    normalized = (images - mean[None, :, None, None]) / std[None, :, None, None]
    return Dataset(name, normalized, labels, classes, train_idx, test_idx, mean, std)


def load_dataset(config, rng_data: np.random.Generator, rng_split: np.random.Generator,
                 data_dir: Optional[Path] = None) -> Dataset:
    """
    Build the dataset described by a DatasetConfig.

    Args:
        config: DatasetConfig
        rng_data: Stream for sample generation
        rng_split: Stream for the train/test split
        data_dir: Base directory for relative image-folder paths

    Returns:
        Normalized, split Dataset
    """
    if config.name == "synthetic-blobs":
        images, labels = synthetic_blobs(config.samples, config.classes, config.resolution, rng_data, config.noise)
        classes = config.classes
    elif config.name == "synthetic-textures":
        images, labels = synthetic_textures(config.samples, config.classes, config.resolution, rng_data, config.noise)
        classes = config.classes
    elif config.name == "downsampled-digits":
        images, labels = downsampled_digits(config.samples, config.resolution, rng_data)
        classes = 10
    elif config.name == "image-folder":
        root = Path(config.path)
        if not root.is_absolute() and data_dir is not None:
            root = Path(data_dir) / root
        images, labels, classes = image_folder(root, config.resolution)
    else:
        raise ValueError(f"Unknown dataset '{config.name}'")

    dataset = make_dataset(config.name, images, labels, classes, config.train_fraction, rng_split)
    logger.info(f"Dataset {config.name}: {len(dataset)} samples, {classes} classes, "
                f"{dataset.channels}×{config.resolution}×{config.resolution}, "
                f"{len(dataset.train_indices)} train / {len(dataset.test_indices)} test")
    return dataset


# ==================== Batching ====================

def augment_batch(images: np.ndarray, rng: np.random.Generator, padding: Optional[int] = None) -> np.ndarray:
    """
    Random crop from a zero-padded copy plus a random horizontal flip,
    independently per sample.
    """
    n, _, h, w = images.shape
    pad = padding if padding is not None else max(1, h // 8)
    padded = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    offsets = rng.integers(0, 2 * pad + 1, size=(n, 2))
    flips = rng.random(n) < 0.5
    out = np.empty_like(images)
    for s in range(n):
        dy, dx = offsets[s]
        crop = padded[s, :, dy:dy + h, dx:dx + w]
        out[s] = crop[:, :, ::-1] if flips[s] else crop
    return out


class BatchLoader:
    """
    Iterates (images, labels) mini-batches over a fixed sample set.

    Every pass draws a new order from `rng` when shuffling; the last batch
    may be smaller.
    """

    def __init__(self, images: np.ndarray, labels: np.ndarray, batch_size: int, rng: np.random.Generator,
                 shuffle: bool = True, augment: bool = False, augment_rng: Optional[np.random.Generator] = None):
        if len(images) == 0:
            raise ValueError("cannot batch an empty sample set")
        if batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {batch_size}")
        self.images = images
        self.labels = labels
        self.batch_size = batch_size
        self.rng = rng
        self.shuffle = shuffle
        self.augment = augment
        self.augment_rng = augment_rng if augment_rng is not None else rng

    def __len__(self) -> int:
        return math.ceil(len(self.labels) / self.batch_size)

    def __iter__(self) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        order = self.rng.permutation(len(self.labels)) if self.shuffle else np.arange(len(self.labels))
        for start in range(0, len(order), self.batch_size):
            idx = order[start:start + self.batch_size]
            batch = self.images[idx]
            if self.augment:
                batch = augment_batch(batch, self.augment_rng)
            yield batch, self.labels[idx]


if __name__ == "__main__":
    rng = np.random.default_rng(0)
    images, labels = synthetic_blobs(40, 4, 8, rng)
    print(f"blobs: {images.shape}, label counts {np.bincount(labels)}")
    images, labels = downsampled_digits(100, 16, rng)
    print(f"digits: {images.shape}, label counts {np.bincount(labels, minlength=10)}")
