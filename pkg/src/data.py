"""
Dataset ingestion and synthetic manifolds.

Provides:
- IDX image/label readers (plain or gzip-compressed)
- A noisy circle embedded in [0.1, 0.9]^d with an exact distance oracle
- Deterministic shuffled splits, subsetting and binarization
"""

import gzip
import logging
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .numerics import gaussian_batch, make_rng

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# Refuse headers announcing more than this many bytes of payload
MAX_IDX_PAYLOAD = 1 << 34

# Keeps a noise-free circle inside [0.1, 0.9]^d
MAX_CIRCLE_RADIUS = 0.4


class DataFormatError(ValueError):
    """Raised for malformed or truncated input files."""


@dataclass(frozen=True)
class CircleManifold:
    """
    A circle of `radius` in the plane spanned by the first two columns of
    `rotation`, centered at `center`.
    """

    center: np.ndarray
    rotation: np.ndarray
    radius: float

    def local_coordinates(self, points) -> np.ndarray:
        return (np.atleast_2d(np.asarray(points, dtype=np.float64)) - self.center) @ self.rotation

    def distance(self, points) -> np.ndarray:
        """Exact Euclidean distance from each point to the circle."""
        z = self.local_coordinates(points)
        in_plane = np.hypot(z[:, 0], z[:, 1]) - self.radius
        off_plane = np.sum(z[:, 2:] ** 2, axis=1)
        return np.sqrt(in_plane**2 + off_plane)

    def point(self, angle: float) -> np.ndarray:
        z = np.zeros(self.center.shape[0])
        z[0], z[1] = self.radius * math.cos(angle), self.radius * math.sin(angle)
        return self.center + self.rotation @ z

    def normal(self, angle: float) -> np.ndarray:
        """Unit vector pointing radially outward at the given angle."""
        z = np.zeros(self.center.shape[0])
        z[0], z[1] = math.cos(angle), math.sin(angle)
        return self.rotation @ z


@dataclass(frozen=True)
class Geometry:
    kind: str = "none"  # "none", "grid" or "synthetic"
    shape: tuple[int, int] | None = None
    manifold: CircleManifold | None = None


@dataclass(frozen=True)
class Dataset:
    items: np.ndarray
    labels: np.ndarray | None = None
    geometry: Geometry = field(default_factory=Geometry)

    def __post_init__(self):
        if self.items.ndim != 2:
            raise ValueError(f"Dataset items must be 2-D, got shape {self.items.shape}")
        if self.labels is not None and len(self.labels) != len(self.items):
            raise ValueError(
                f"Label count {len(self.labels)} does not match item count {len(self.items)}"
            )

    def __len__(self) -> int:
        return self.items.shape[0]

    @property
    def dim(self) -> int:
        return self.items.shape[1]


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Dataset file not found: {path}")
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return f.read()


def _parse_idx(raw: bytes, expected_magic: int, ndim: int, path) -> tuple[tuple[int, ...], bytes]:
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise DataFormatError(f"{path}: truncated IDX header")

    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise DataFormatError(
            f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )

    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    payload = math.prod(dims)
    if payload > MAX_IDX_PAYLOAD:
        raise DataFormatError(f"{path}: IDX dimensions {dims} overflow the payload limit")
    body = raw[header_len:]
    if len(body) < payload:
        raise DataFormatError(f"{path}: truncated IDX payload ({len(body)} of {payload} bytes)")

    return dims, body[:payload]


def load_idx_images(path) -> Dataset:
    """
    Load an IDX image file (magic 0x00000803) scaled into [0, 1].

    Args:
        path: File path, optionally gzip-compressed (.gz)

    Returns:
        Dataset with grid geometry (rows, cols)

    Raises:
        DataFormatError: On bad magic, truncation or oversized dimensions
    """
    raw = _read_bytes(path)
    (count, rows, cols), body = _parse_idx(raw, IDX_IMAGES_MAGIC, 3, path)
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(count, rows * cols)
    logger.info(f"Loaded {count} images of {rows}x{cols} from {path}")
    return Dataset(
        items=pixels.astype(np.float64) / 255.0,
        geometry=Geometry(kind="grid", shape=(rows, cols)),
    )


def load_idx_labels(path) -> np.ndarray:
    """Load an IDX label file (magic 0x00000801); labels are not range-checked."""
    raw = _read_bytes(path)
    (count,), body = _parse_idx(raw, IDX_LABELS_MAGIC, 1, path)
    logger.info(f"Loaded {count} labels from {path}")
    return np.frombuffer(body, dtype=np.uint8).astype(np.int64)


def load_idx_dataset(images_path, labels_path=None) -> Dataset:
    dataset = load_idx_images(images_path)
    if labels_path is None:
        return dataset
    labels = load_idx_labels(labels_path)
    if len(labels) != len(dataset):
        raise DataFormatError(
            f"{labels_path}: {len(labels)} labels for {len(dataset)} images"
        )
    return replace(dataset, labels=labels)


def synth_circle(
    n: int, d: int, radius: float = 0.3, noise_std: float = 0.0, seed: int = 0
) -> Dataset:
    """
    Points on a circle rotated into R^d, offset to the cube center.

    The circle lives in a random 2-D plane through (0.5, ..., 0.5); with
    0 < radius <= 0.4 and no noise every point lies in [0.1, 0.9]^d. Gaussian
    off-manifold noise of std `noise_std` is added in all d directions.

    Noisy points are clipped into [0, 1]^d. The exported manifold measures
    the exact distance of the returned (clipped) points; only a point moved
    by the clip is nearer the circle than its noise draw would put it.

    Raises:
        ValueError: If d < 2, radius is outside (0, 0.4] or noise_std < 0
    """
    if d < 2:
        raise ValueError(f"Circle needs d >= 2, got {d}")
    if not 0.0 < radius <= MAX_CIRCLE_RADIUS:
        raise ValueError(f"radius must lie in (0, {MAX_CIRCLE_RADIUS}], got {radius}")
    if noise_std < 0:
        raise ValueError(f"noise_std must be >= 0, got {noise_std}")

    rng = make_rng(seed)
    rotation, _ = np.linalg.qr(gaussian_batch(rng, d, d, 1.0))
    manifold = CircleManifold(center=np.full(d, 0.5), rotation=rotation, radius=radius)

    angles = rng.uniform(0.0, 2.0 * math.pi, size=n)
    z = np.zeros((n, d))
    z[:, 0] = radius * np.cos(angles)
    z[:, 1] = radius * np.sin(angles)
    z += gaussian_batch(rng, n, d, noise_std)

    raw = manifold.center + z @ rotation.T
    items = np.clip(raw, 0.0, 1.0)
    clipped = int(np.count_nonzero(np.any(items != raw, axis=1)))
    if clipped:
        logger.debug(f"Circle: {clipped} of {n} noisy points clipped into the unit cube")
    return Dataset(
        items=items,
        geometry=Geometry(kind="synthetic", manifold=manifold),
    )


def split(dataset: Dataset, fractions, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """
    Deterministic shuffled (train, valid, test) split.

    Raises:
        ValueError: If fractions are negative or do not sum to 1
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or not math.isclose(sum(fractions), 1.0):
        raise ValueError(f"Split fractions must be three non-negative values summing to 1: {fractions}")

    n = len(dataset)
    order = make_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_valid = min(int(round(fractions[1] * n)), n - n_train)
    bounds = (order[:n_train], order[n_train : n_train + n_valid], order[n_train + n_valid :])
    return tuple(take(dataset, idx) for idx in bounds)


def take(dataset: Dataset, idx) -> Dataset:
    idx = np.asarray(idx, dtype=np.int64)
    labels = dataset.labels[idx] if dataset.labels is not None else None
    return replace(dataset, items=dataset.items[idx], labels=labels)


def subset(dataset: Dataset, n: int) -> Dataset:
    """First n items (all when n <= 0)."""
    if n <= 0 or n >= len(dataset):
        return dataset
    return take(dataset, np.arange(n))


def binarize(dataset: Dataset, threshold: float) -> Dataset:
    return replace(dataset, items=(dataset.items > threshold).astype(np.float64))


def grid_shape(dataset: Dataset) -> tuple[int, int]:
    if dataset.geometry.kind != "grid" or dataset.geometry.shape is None:
        raise DataFormatError("Dataset has no grid geometry")
    return dataset.geometry.shape
