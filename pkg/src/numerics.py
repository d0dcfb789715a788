"""
Dense numerical helpers shared by every other module.

Provides:
- Seeded, counter-based random streams (Philox)
- Gaussian draws that keep streams aligned
- Thin SVD with canonical signs
- Stable log-sum-exp
"""

import logging

import numpy as np
from scipy.special import expit
from scipy.special import logsumexp as _scipy_logsumexp

logger = logging.getLogger(__name__)

# Type aliases: matrices and vectors are float64 numpy arrays
Matrix = np.ndarray
Vector = np.ndarray
Rng = np.random.Generator


def make_rng(seed: int, stream: int = 0) -> Rng:
    """
    Create an independent random stream.

    Streams derived from the same seed but different `stream` indices never
    overlap, so parallel work splits the seed space instead of sharing a stream.

    Args:
        seed: Run seed (non-negative 64-bit integer)
        stream: Stream index within the run

    Returns:
        numpy Generator backed by a Philox counter-based bit generator
    """
    if seed < 0:
        raise ValueError(f"Seed must be non-negative, got {seed}")
    seq = np.random.SeedSequence(seed, spawn_key=(stream,))
    return np.random.Generator(np.random.Philox(seq))


def gaussian_vector(rng: Rng, n: int, std: float) -> Vector:
    """
    Draw `n` independent zero-mean Gaussian values with standard deviation `std`.

    Always consumes exactly `n` standard-normal draws, also for std = 0.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if std < 0:
        raise ValueError(f"std must be >= 0, got {std}")
    return std * rng.standard_normal(n)


def gaussian_batch(rng: Rng, rows: int, n: int, std: float) -> Matrix:
    """
    `rows` stacked draws of `gaussian_vector(rng, n, std)`, taken in row order.

    Row i equals what the i-th of `rows` successive `gaussian_vector` calls returns.
    """
    if rows < 0 or n < 1:
        raise ValueError(f"Need rows >= 0 and n >= 1, got rows={rows}, n={n}")
    if std < 0:
        raise ValueError(f"std must be >= 0, got {std}")
    return std * rng.standard_normal((rows, n))


def as_matrix(values, name: str = "matrix") -> Matrix:
    """Convert to a finite 2-D float64 array."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    return require_finite(arr, name)


def require_finite(arr: np.ndarray, name: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def sigmoid(z: np.ndarray) -> np.ndarray:
    return expit(z)


def svd(a: Matrix) -> tuple[Matrix, Vector, Matrix]:
    """
    Thin singular value decomposition a = u @ diag(s) @ v.T.

    Singular values come back non-increasing. Signs are canonical: the
    largest-magnitude entry of each right singular vector is positive,
    with the matching left vector flipped alongside.

    Args:
        a: Finite 2-D matrix

    Returns:
        Tuple of (u, s, v) with orthonormal columns in u and v
    """
    a = as_matrix(a, "svd input")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    v = vt.T

    if v.size:
        pivots = np.argmax(np.abs(v), axis=0)
        signs = np.sign(v[pivots, np.arange(v.shape[1])])
        signs[signs == 0] = 1.0
        u = u * signs
        v = v * signs

    return u, s, v


def logsumexp(values) -> float:
    """
    Compute log(sum(exp(values))) without overflow.

    Raises:
        ValueError: If values is empty
    """
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("logsumexp of an empty vector is undefined")
    return float(_scipy_logsumexp(arr))


def standard_error(values) -> float:
    """Standard error of the mean (unbiased std / sqrt(n)); 0 for fewer than two values."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size < 2:
        return 0.0
    return float(np.std(arr, ddof=1) / np.sqrt(arr.size))
