"""Shared fixtures for the CAE test suite."""

import gzip
import struct

import numpy as np
import pytest

from src.data import IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, synth_circle
from src.model import CaeHyper, CaeParams, train
from src.numerics import make_rng


def random_params(rng, d: int, k: int, scale: float = 0.5) -> CaeParams:
    """Small random layer with non-zero biases."""
    return CaeParams(
        w=scale * rng.standard_normal((k, d)),
        b_h=0.1 * rng.standard_normal(k),
        b_r=0.1 * rng.standard_normal(d),
    )


def finite_difference(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of a vector-valued f with respect to every entry of x."""
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = step
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * step))
    return np.stack(cols, axis=-1)


def flat(g) -> np.ndarray:
    """Concatenate CaeParams or Gradients into one vector."""
    if isinstance(g, CaeParams):
        return np.concatenate([g.w.ravel(), g.b_h, g.b_r])
    return np.concatenate([g.dw.ravel(), g.db_h, g.db_r])


def unflat(p: CaeParams, theta: np.ndarray) -> CaeParams:
    k, d = p.w.shape
    return CaeParams(w=theta[: k * d].reshape(k, d), b_h=theta[k * d : k * d + k], b_r=theta[k * d + k :])


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def write_idx_images(path, images: np.ndarray, compress: bool = False):
    """Write uint8 images (n, rows, cols) in the IDX layout."""
    n, rows, cols = images.shape
    payload = struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.astype(np.uint8).tobytes()
    opener = gzip.open if compress else open
    with opener(path, "wb") as f:
        f.write(payload)


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


@pytest.fixture
def rng():
    """Fixed random stream for building test inputs."""
    return make_rng(1234)


@pytest.fixture
def params(rng):
    """Random 6 -> 4 layer."""
    return random_params(rng, d=6, k=4)


@pytest.fixture(scope="session")
def circle_data():
    """Noise-free circle in 16 dimensions."""
    return synth_circle(n=2000, d=16, radius=0.3, noise_std=0.0, seed=0)


CIRCLE_HYPER = CaeHyper(hidden=32, lam=0.1, learning_rate=0.1, epochs=50, batch_size=20, seed=0)


@pytest.fixture(scope="session")
def trained_circle(circle_data):
    """CAE trained on the circle; returns (params, training log)."""
    return train(circle_data, CIRCLE_HYPER)


@pytest.fixture
def idx_fixture(tmp_path):
    """Forty random 4x4 images with two-class labels, written as IDX files."""
    gen = make_rng(7)
    images = gen.integers(0, 256, size=(40, 4, 4))
    labels = (images.reshape(40, -1).mean(axis=1) > 127).astype(np.uint8)
    images_path = tmp_path / "images.idx"
    labels_path = tmp_path / "labels.idx"
    write_idx_images(images_path, images)
    write_idx_labels(labels_path, labels)
    return images_path, labels_path, images, labels
