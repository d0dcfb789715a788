"""
Single-layer contractive auto-encoder.

This module handles:
- Encoder/decoder maps with tied weights
- Cross-entropy reconstruction loss and the contractive penalty
- The exact Jacobian of the encoder
- Analytic gradients of the training objective
- Mini-batch SGD training with a divergence guard

Every forward operation accepts either one vector of shape (d,) or a batch of
shape (n, d).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .numerics import Matrix, Rng, Vector, as_matrix, make_rng, sigmoid

logger = logging.getLogger(__name__)

# Reconstructions are clipped into [CLIP_EPS, 1 - CLIP_EPS] before logs
CLIP_EPS = 1e-7


class DivergenceError(RuntimeError):
    """Raised when training produces a non-finite objective or parameters."""

    def __init__(self, message: str, epoch: int, step: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step


@dataclass(frozen=True)
class CaeParams:
    """Parameters of one CAE layer: W (k x d), b_h (k), b_r (d)."""

    w: Matrix
    b_h: Vector
    b_r: Vector

    def __post_init__(self):
        k, d = self.w.shape
        if self.b_h.shape != (k,) or self.b_r.shape != (d,):
            raise ValueError(
                f"Inconsistent shapes: w={self.w.shape}, b_h={self.b_h.shape}, b_r={self.b_r.shape}"
            )
        for name in ("w", "b_h", "b_r"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"CaeParams.{name} contains non-finite entries")

    @property
    def input_size(self) -> int:
        return self.w.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.w.shape[0]


@dataclass(frozen=True)
class CaeHyper:
    """Training hyper-parameters for one layer."""

    hidden: int
    lam: float = 0.1
    learning_rate: float = 0.1
    epochs: int = 10
    batch_size: int = 20
    seed: int = 0
    init_scale: float = 1.0

    def __post_init__(self):
        if self.hidden < 1:
            raise ValueError(f"hidden must be >= 1, got {self.hidden}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.init_scale <= 0:
            raise ValueError(f"init_scale must be > 0, got {self.init_scale}")


@dataclass(frozen=True)
class Gradients:
    dw: Matrix
    db_h: Vector
    db_r: Vector

    def __add__(self, other: "Gradients") -> "Gradients":
        return Gradients(self.dw + other.dw, self.db_h + other.db_h, self.db_r + other.db_r)


@dataclass(frozen=True)
class EpochRecord:
    """Whole-training-set means after one epoch (epoch 0 is the initialization)."""

    epoch: int
    objective: float
    reconstruction: float
    penalty: float
    invariance: float | None = None


@dataclass
class TrainingLog:
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord):
        self.records.append(record)

    @property
    def initial(self) -> EpochRecord:
        return self.records[0]

    @property
    def final(self) -> EpochRecord:
        return self.records[-1]

    def to_rows(self) -> list[dict]:
        rows = []
        for rec in self.records:
            row = {
                "epoch": rec.epoch,
                "objective": rec.objective,
                "reconstruction": rec.reconstruction,
                "penalty": rec.penalty,
            }
            if rec.invariance is not None:
                row["invariance"] = rec.invariance
            rows.append(row)
        return rows


def init_params(d: int, k: int, init_scale: float, rng: Rng) -> CaeParams:
    """
    Symmetric uniform initialization.

    W ~ U[-a, a] with a = init_scale * sqrt(6 / (d + k)); biases start at zero.
    """
    a = init_scale * math.sqrt(6.0 / (d + k))
    w = rng.uniform(-a, a, size=(k, d))
    return CaeParams(w=w, b_h=np.zeros(k), b_r=np.zeros(d))


def _check_input(p: CaeParams, x: np.ndarray, size: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != size:
        raise ValueError(f"{what} has shape {x.shape}, expected (..., {size})")
    return x


def encode(p: CaeParams, x) -> np.ndarray:
    """h = sigmoid(W x + b_h)."""
    x = _check_input(p, x, p.input_size, "encoder input")
    return sigmoid(x @ p.w.T + p.b_h)


def decode(p: CaeParams, h) -> np.ndarray:
    """r = sigmoid(W^T h + b_r), tied weights."""
    h = _check_input(p, h, p.hidden_size, "decoder input")
    return sigmoid(h @ p.w + p.b_r)


def reconstruct(p: CaeParams, x) -> np.ndarray:
    return decode(p, encode(p, x))


def cross_entropy(x, r):
    """
    Cross-entropy reconstruction loss summed over the last axis.

    Args:
        x: Targets in [0, 1]
        r: Reconstructions, clipped into [CLIP_EPS, 1 - CLIP_EPS]

    Returns:
        float for a single vector, one value per row for a batch
    """
    x = np.asarray(x, dtype=np.float64)
    r = np.clip(np.asarray(r, dtype=np.float64), CLIP_EPS, 1.0 - CLIP_EPS)
    if x.shape != r.shape:
        raise ValueError(f"Target shape {x.shape} does not match reconstruction {r.shape}")
    loss = -np.sum(x * np.log(r) + (1.0 - x) * np.log1p(-r), axis=-1)
    return float(loss) if loss.ndim == 0 else loss


def jacobian(p: CaeParams, x) -> Matrix:
    """
    Jacobian of the encoder at a single point: row i is h_i (1 - h_i) W_i.
    """
    x = _check_input(p, x, p.input_size, "encoder input")
    if x.ndim != 1:
        raise ValueError("jacobian expects a single input vector")
    h = encode(p, x)
    return (h * (1.0 - h))[:, None] * p.w


def contractive_penalty(p: CaeParams, x):
    """
    Squared Frobenius norm of the Jacobian, without forming it.

    sum_i (h_i (1 - h_i))^2 * ||W_i||^2; float for a vector, array for a batch.
    """
    h = encode(p, x)
    row_norms = np.sum(p.w * p.w, axis=1)
    s = h * (1.0 - h)
    penalty = (s * s) @ row_norms
    return float(penalty) if np.ndim(penalty) == 0 else penalty


def _as_batch(batch, size: int) -> np.ndarray:
    arr = np.asarray(batch, dtype=np.float64)
    if arr.ndim == 1 and arr.size == size:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("Batch must be a non-empty list of vectors")
    if arr.shape[1] != size:
        raise ValueError(f"Batch vectors have size {arr.shape[1]}, expected {size}")
    return arr


def objective_terms(p: CaeParams, batch) -> tuple[float, float]:
    """Return (summed reconstruction loss, summed penalty) over the batch."""
    x = _as_batch(batch, p.input_size)
    h = encode(p, x)
    r = decode(p, h)
    s = h * (1.0 - h)
    penalty = float(np.sum((s * s) @ np.sum(p.w * p.w, axis=1)))
    return float(np.sum(cross_entropy(x, r))), penalty


def objective(p: CaeParams, batch, lam: float) -> float:
    """Sum over the batch of L(x, g(f(x))) + lam * ||J(x)||_F^2."""
    recon, penalty = objective_terms(p, batch)
    return recon + lam * penalty


def gradient(p: CaeParams, batch, lam: float) -> Gradients:
    """
    Exact gradient of `objective` with respect to W, b_h and b_r.

    The reconstruction term contributes through both uses of the tied W.
    The penalty sum_i s_i^2 ||W_i||^2 (s = h(1-h)) contributes through
    ||W_i||^2 directly and through h via the encoder pre-activation.
    """
    x = _as_batch(batch, p.input_size)
    h = encode(p, x)
    r = decode(p, h)
    s = h * (1.0 - h)
    row_norms = np.sum(p.w * p.w, axis=1)

    # sigmoid + cross-entropy: derivative w.r.t. decoder pre-activation
    d_out = r - x

    d_h = d_out @ p.w.T
    if lam:
        d_h = d_h + lam * 2.0 * s * row_norms * (1.0 - 2.0 * h)
    d_pre = d_h * s

    dw = d_pre.T @ x + h.T @ d_out
    if lam:
        dw = dw + 2.0 * lam * np.sum(s * s, axis=0)[:, None] * p.w

    return Gradients(dw=dw, db_h=d_pre.sum(axis=0), db_r=d_out.sum(axis=0))


def _stepped(p: CaeParams, g: Gradients, step: float) -> tuple[Matrix, Vector, Vector] | None:
    """Arrays after one descent step, or None if any entry is non-finite."""
    arrays = (p.w - step * g.dw, p.b_h - step * g.db_h, p.b_r - step * g.db_r)
    if not all(np.all(np.isfinite(a)) for a in arrays):
        return None
    return arrays


def run_sgd(
    params: CaeParams,
    n_items: int,
    hyper: CaeHyper,
    rng: Rng,
    step_gradient: Callable[[CaeParams, np.ndarray], Gradients],
    evaluate: Callable[[CaeParams, int], EpochRecord],
) -> tuple[CaeParams, TrainingLog]:
    """
    Mini-batch SGD loop shared by single layers and the second stacked layer.

    Args:
        params: Initial parameters
        n_items: Number of training examples
        hyper: Learning rate, epochs and batch size
        rng: Shuffling stream (one permutation per epoch)
        step_gradient: Gradient of the summed objective for a batch of indices
        evaluate: Whole-set statistics after an epoch

    Returns:
        Tuple of (trained parameters, training log)

    Raises:
        DivergenceError: If parameters or the objective become non-finite
    """
    log = TrainingLog()
    log.append(_checked(evaluate(params, 0)))

    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(n_items)
        for step, start in enumerate(range(0, n_items, hyper.batch_size)):
            idx = order[start : start + hyper.batch_size]
            grads = step_gradient(params, idx)
            arrays = _stepped(params, grads, hyper.learning_rate / len(idx))
            if arrays is None:
                raise DivergenceError(
                    f"Parameters became non-finite at epoch {epoch}, step {step}",
                    epoch=epoch,
                    step=step,
                )
            params = CaeParams(*arrays)

        record = _checked(evaluate(params, epoch))
        log.append(record)
        logger.info(
            f"Epoch {epoch}/{hyper.epochs}: objective={record.objective:.6f} "
            f"penalty={record.penalty:.6f}"
            + (f" invariance={record.invariance:.6f}" if record.invariance is not None else "")
        )

    return params, log


def _checked(record: EpochRecord) -> EpochRecord:
    if not math.isfinite(record.objective):
        raise DivergenceError(
            f"Objective became non-finite at epoch {record.epoch}", epoch=record.epoch
        )
    return record


def evaluate_layer(p: CaeParams, data: np.ndarray, lam: float, epoch: int) -> EpochRecord:
    n = data.shape[0]
    recon, penalty = objective_terms(p, data)
    return EpochRecord(
        epoch=epoch,
        objective=(recon + lam * penalty) / n,
        reconstruction=recon / n,
        penalty=penalty / n,
    )


def train(data, hyper: CaeHyper) -> tuple[CaeParams, TrainingLog]:
    """
    Train one CAE layer by mini-batch SGD on the summed objective.

    Deterministic given hyper.seed: initialization and shuffling both come
    from stream 0 of that seed.

    Args:
        data: Array (n, d) with values in [0, 1], or a Dataset
        hyper: Layer hyper-parameters

    Returns:
        Tuple of (trained parameters, training log)
    """
    x = as_matrix(getattr(data, "items", data), "training data")
    if x.shape[0] == 0:
        raise ValueError("Training data is empty")
    if x.min() < 0.0 or x.max() > 1.0:
        raise ValueError("Training inputs must lie in [0, 1]")

    rng = make_rng(hyper.seed)
    params = init_params(x.shape[1], hyper.hidden, hyper.init_scale, rng)
    logger.info(
        f"Training CAE d={x.shape[1]} k={hyper.hidden} on {x.shape[0]} examples "
        f"(lambda={hyper.lam}, lr={hyper.learning_rate}, epochs={hyper.epochs})"
    )

    return run_sgd(
        params,
        x.shape[0],
        hyper,
        rng,
        step_gradient=lambda p, idx: gradient(p, x[idx], hyper.lam),
        evaluate=lambda p, epoch: evaluate_layer(p, x, hyper.lam, epoch),
    )
