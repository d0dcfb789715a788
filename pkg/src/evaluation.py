"""
Quantitative evaluation of trained models and their samples.

This module handles:
- Parzen-window log-likelihood of held-out data under generated samples
- Bandwidth cross-validation on a validation set
- Random affine deformations of grid images
- Average normalized sensitivity of a layer to those deformations
- A frozen-feature linear probe (a proxy for supervised fine-tuning)
"""

import hashlib
import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
from scipy.ndimage import affine_transform
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .numerics import Rng, standard_error

logger = logging.getLogger(__name__)

# Fraction of highest-variance units kept by the sensitivity score
SELECTED_UNIT_FRACTION = 0.2

DEFAULT_BANDWIDTHS = tuple(float(b) for b in np.logspace(np.log10(0.05), 0.0, 10))

# Test rows per cdist call
_PARZEN_CHUNK = 256


class EvaluationError(ValueError):
    """Raised for inputs an evaluation cannot be computed on."""


@dataclass(frozen=True)
class ParzenModel:
    samples: np.ndarray
    bandwidth: float

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


def parzen_fit(samples, bandwidth: float) -> ParzenModel:
    """
    Isotropic Gaussian kernel density over the samples.

    p(x) = (1/N) sum_j N(x; s_j, bandwidth^2 I)
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[0] == 0 or samples.size == 0:
        raise EvaluationError("Parzen estimator needs at least one sample")
    if not np.all(np.isfinite(samples)):
        raise EvaluationError("Parzen samples contain non-finite values")
    if not bandwidth > 0:
        raise EvaluationError(f"Bandwidth must be > 0, got {bandwidth}")
    return ParzenModel(samples=samples, bandwidth=float(bandwidth))


def parzen_log_density(model: ParzenModel, test) -> np.ndarray:
    """Per-example log p(x), via log-sum-exp over the kernels."""
    test = np.atleast_2d(np.asarray(test, dtype=np.float64))
    if test.shape[0] == 0:
        raise EvaluationError("Test set is empty")
    if test.shape[1] != model.dim:
        raise EvaluationError(f"Test points have dimension {test.shape[1]}, expected {model.dim}")

    bw2 = model.bandwidth**2
    log_norm = 0.5 * model.dim * math.log(2.0 * math.pi * bw2) + math.log(model.samples.shape[0])

    out = np.empty(test.shape[0])
    for start in range(0, test.shape[0], _PARZEN_CHUNK):
        chunk = test[start : start + _PARZEN_CHUNK]
        sq = cdist(chunk, model.samples, "sqeuclidean")
        out[start : start + len(chunk)] = logsumexp(-sq / (2.0 * bw2), axis=1) - log_norm
    return out


def parzen_loglik(model: ParzenModel, test) -> tuple[float, float]:
    """Mean and standard error of the per-example log-likelihood."""
    values = parzen_log_density(model, test)
    return float(np.mean(values)), standard_error(values)


def cross_validate_bandwidth(samples, validation, grid=DEFAULT_BANDWIDTHS) -> float:
    """
    Grid bandwidth with the highest mean validation log-likelihood.

    Ties go to the smaller bandwidth.
    """
    grid = sorted(float(b) for b in grid)
    if not grid:
        raise EvaluationError("Bandwidth grid is empty")

    best_bw, best_ll = grid[0], -math.inf
    for bw in grid:
        mean_ll, _ = parzen_loglik(parzen_fit(samples, bw), validation)
        logger.debug(f"Bandwidth {bw:.4f}: validation log-likelihood {mean_ll:.3f}")
        if mean_ll > best_ll:
            best_bw, best_ll = bw, mean_ll
    logger.info(f"Selected Parzen bandwidth {best_bw:.4f} (validation LL {best_ll:.3f})")
    return best_bw


@dataclass(frozen=True)
class DeformParams:
    rotation: float = 0.0  # radians
    scale_x: float = 1.0
    scale_y: float = 1.0
    shear: float = 0.0
    translate_x: float = 0.0  # pixels
    translate_y: float = 0.0

    @property
    def is_identity(self) -> bool:
        return self == DeformParams()


@dataclass(frozen=True)
class DeformRanges:
    """Closed (low, high) intervals for each affine parameter."""

    rotation: tuple[float, float] = (-0.1, 0.1)
    scale_x: tuple[float, float] = (0.9, 1.1)
    scale_y: tuple[float, float] = (0.9, 1.1)
    shear: tuple[float, float] = (-0.1, 0.1)
    translate_x: tuple[float, float] = (-1.5, 1.5)
    translate_y: tuple[float, float] = (-1.5, 1.5)

    def __post_init__(self):
        for name in DeformParams.__dataclass_fields__:
            low, high = getattr(self, name)
            if low > high:
                raise ValueError(f"Deformation range for {name} is empty: ({low}, {high})")


def sample_deform_params(rng: Rng, ranges: DeformRanges = DeformRanges()) -> DeformParams:
    """Six independent uniform draws, in field order."""
    values = {}
    for name in DeformParams.__dataclass_fields__:
        low, high = getattr(ranges, name)
        values[name] = float(rng.uniform(low, high))
    return DeformParams(**values)


def _affine_matrix(p: DeformParams) -> np.ndarray:
    """Forward map in (x, y): scale, then shear, then rotation."""
    scale = np.array([[p.scale_x, 0.0], [0.0, p.scale_y]])
    shear = np.array([[1.0, p.shear], [0.0, 1.0]])
    c, s = math.cos(p.rotation), math.sin(p.rotation)
    rotation = np.array([[c, -s], [s, c]])
    return rotation @ shear @ scale


def affine_deform(image, shape: tuple[int, int], p: DeformParams) -> np.ndarray:
    """
    Warp a flattened H x W image about its center, then translate.

    Inverse mapping with bilinear interpolation; pixels mapped from outside
    the image read as 0. Identity parameters return an exact copy.
    """
    height, width = shape
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 1 or image.size != height * width:
        raise EvaluationError(f"Image of size {image.size} is not a {height}x{width} grid")
    if p.is_identity:
        return image.copy()

    # scipy works in (row, col) = (y, x)
    forward_xy = _affine_matrix(p)
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    inverse_rc = swap @ np.linalg.inv(forward_xy) @ swap
    center = np.array([(height - 1) / 2.0, (width - 1) / 2.0])
    shift = np.array([p.translate_y, p.translate_x])
    offset = center - inverse_rc @ (center + shift)

    warped = affine_transform(
        image.reshape(height, width),
        inverse_rc,
        offset=offset,
        order=1,
        mode="constant",
        cval=0.0,
    )
    return np.clip(warped, 0.0, 1.0).ravel()


Deform = Callable[[np.ndarray, Rng], np.ndarray]


def identity_deform(image: np.ndarray, rng: Rng) -> np.ndarray:
    return np.array(image, dtype=np.float64)


def random_affine(shape: tuple[int, int], ranges: DeformRanges = DeformRanges()) -> Deform:
    """Deformation that draws fresh affine parameters for every call."""

    def deform(image: np.ndarray, rng: Rng) -> np.ndarray:
        return affine_deform(image, shape, sample_deform_params(rng, ranges))

    return deform


def deform_dataset(data, deform: Deform, rng: Rng) -> np.ndarray:
    """One deformation draw per example, in example order."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    return np.vstack([deform(x, rng) for x in data])


@dataclass(frozen=True)
class SensitivityReport:
    unit_variances: np.ndarray
    selected_units: np.ndarray
    gamma_per_example: np.ndarray
    gamma_bar: float
    gamma_stderr: float
    pairing: str | None = None  # digest of the (data, deformed) pair


def select_units(variances: np.ndarray) -> np.ndarray:
    """
    Indices of the ceil(0.2 k) highest-variance units, index order on ties.

    Zero-variance units are dropped from the selection.
    """
    k = variances.shape[0]
    n_selected = math.ceil(SELECTED_UNIT_FRACTION * k)
    order = np.argsort(-variances, kind="stable")[:n_selected]
    return order[variances[order] > 0]


def pairing_tag(data: np.ndarray, deformed: np.ndarray) -> str:
    """Digest identifying the exact examples and deformation draws a report was scored on."""
    digest = hashlib.sha256()
    for arr in (data, deformed):
        arr = np.ascontiguousarray(arr, dtype="<f8")
        digest.update(np.asarray(arr.shape, dtype="<u8").tobytes())
        digest.update(arr.tobytes())
    return digest.hexdigest()


def sensitivity_from_pairs(
    encoder: Callable[[np.ndarray], np.ndarray], data, deformed
) -> SensitivityReport:
    """
    Normalized sensitivity given precomputed deformed copies of the data.

    s_i(x) = (f_i(x) - f_i(T(x)))^2 / V[f_i] with V the unbiased variance of
    f_i over `data`; gamma(x) averages s_i over the selected units. The report
    is tagged with `pairing_tag(data, deformed)`.

    Raises:
        EvaluationError: If every unit has zero variance
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    deformed = np.atleast_2d(np.asarray(deformed, dtype=np.float64))
    if data.shape[0] == 0:
        raise EvaluationError("Sensitivity needs a non-empty dataset")
    if data.shape != deformed.shape:
        raise EvaluationError(f"Deformed data shape {deformed.shape} != data shape {data.shape}")

    feats = np.atleast_2d(encoder(data))
    feats_deformed = np.atleast_2d(encoder(deformed))
    variances = np.var(feats, axis=0, ddof=1) if feats.shape[0] > 1 else np.zeros(feats.shape[1])

    selected = select_units(variances)
    if selected.size == 0:
        raise EvaluationError("Every unit has zero variance over the data (degenerate encoder)")

    diff = feats[:, selected] - feats_deformed[:, selected]
    gamma = np.mean(diff * diff / variances[selected], axis=1)
    return SensitivityReport(
        unit_variances=variances,
        selected_units=selected,
        gamma_per_example=gamma,
        gamma_bar=float(np.mean(gamma)),
        gamma_stderr=standard_error(gamma),
        pairing=pairing_tag(data, deformed),
    )


def normalized_sensitivity(
    encoder: Callable[[np.ndarray], np.ndarray], data, deform: Deform, rng: Rng
) -> SensitivityReport:
    """Average normalized sensitivity with one deformation draw per example."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    return sensitivity_from_pairs(encoder, data, deform_dataset(data, deform, rng))


def sensitivity_difference(
    report_a: SensitivityReport, report_b: SensitivityReport
) -> tuple[float, float]:
    """
    Mean and standard error of the paired differences gamma_A(x) - gamma_B(x).

    Raises:
        EvaluationError: If either report is untagged, or the two were not scored
            on the same examples and deformation draws
    """
    if report_a.pairing is None or report_b.pairing is None:
        raise EvaluationError("Sensitivity report carries no pairing tag")
    a, b = report_a.gamma_per_example, report_b.gamma_per_example
    if a.shape != b.shape or report_a.pairing != report_b.pairing:
        raise EvaluationError("Sensitivity reports are not paired")
    diff = a - b
    return float(np.mean(diff)), standard_error(diff)


@dataclass(frozen=True)
class ProbeResult:
    accuracy: float
    train_accuracy: float
    n_classes: int


def linear_probe(
    features,
    labels,
    splits: tuple,
    seed: int = 0,
    epochs: int = 50,
    learning_rate: float = 0.5,
    batch_size: int = 100,
) -> ProbeResult:
    """
    Multinomial logistic regression on frozen features.

    A desk-scale proxy for supervised fine-tuning, not a reproduction of it.

    Args:
        features: Array (n, k)
        labels: Integer labels (n,)
        splits: (train_indices, test_indices)
        seed: Seed of the mini-batch shuffling generator
        epochs: Passes over the training split
        learning_rate: SGD step size
        batch_size: Mini-batch size

    Returns:
        ProbeResult with test and train accuracy

    Raises:
        EvaluationError: If the training labels contain a single class
    """
    train_idx, test_idx = (np.asarray(s, dtype=np.int64) for s in splits)
    x = torch.as_tensor(np.asarray(features, dtype=np.float64))
    y = torch.as_tensor(np.asarray(labels, dtype=np.int64))

    classes = torch.unique(y[train_idx])
    if classes.numel() < 2:
        raise EvaluationError("Linear probe needs at least two classes in the training split")
    n_classes = int(y.max().item()) + 1

    linear = torch.nn.Linear(x.shape[1], n_classes, dtype=torch.float64)
    torch.nn.init.zeros_(linear.weight)
    torch.nn.init.zeros_(linear.bias)
    optimizer = torch.optim.SGD(linear.parameters(), lr=learning_rate)
    generator = torch.Generator().manual_seed(seed)

    x_train, y_train = x[train_idx], y[train_idx]
    for _ in range(epochs):
        order = torch.randperm(len(train_idx), generator=generator)
        for start in range(0, len(order), batch_size):
            batch = order[start : start + batch_size]
            optimizer.zero_grad()
            loss = torch.nn.functional.cross_entropy(linear(x_train[batch]), y_train[batch])
            loss.backward()
            optimizer.step()

    with torch.no_grad():
        train_acc = (linear(x_train).argmax(dim=1) == y_train).double().mean().item()
        test_acc = (linear(x[test_idx]).argmax(dim=1) == y[test_idx]).double().mean().item()

    logger.info(f"Linear probe: train accuracy {train_acc:.4f}, test accuracy {test_acc:.4f}")
    return ProbeResult(accuracy=test_acc, train_accuracy=train_acc, n_classes=n_classes)
