"""
Two-layer stacked contractive auto-encoder.

Greedy layer-wise training: layer 1 is trained on its own and then frozen;
layer 2 is trained on layer-1 features, optionally with the invariance
(pooling) term that penalizes the change of f'(f(x)) under the first-layer
perturbation J(x) J(x)^T eps.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .model import (
    CLIP_EPS,
    CaeHyper,
    CaeParams,
    EpochRecord,
    Gradients,
    TrainingLog,
    decode,
    encode,
    gradient,
    init_params,
    jacobian,
    objective_terms,
    run_sgd,
)
from .numerics import Matrix, Rng, as_matrix, gaussian_batch, make_rng

logger = logging.getLogger(__name__)

# Stream indices within one layer-2 run
NOISE_STREAM = 1
EVAL_NOISE_STREAM = 2


@dataclass(frozen=True)
class StackedCae:
    layer1: CaeParams
    layer2: CaeParams

    def __post_init__(self):
        if self.layer2.input_size != self.layer1.hidden_size:
            raise ValueError(
                f"Layer 2 input size {self.layer2.input_size} does not match "
                f"layer 1 hidden size {self.layer1.hidden_size}"
            )

    @property
    def input_size(self) -> int:
        return self.layer1.input_size

    @property
    def hidden_size(self) -> int:
        return self.layer2.hidden_size


@dataclass(frozen=True)
class CaePlusHyper:
    """Layer-2 hyper-parameters plus the invariance weight and noise scale."""

    layer: CaeHyper
    lambda_p: float = 0.0
    sigma: float = 0.1
    clip: bool = True

    def __post_init__(self):
        if self.lambda_p < 0:
            raise ValueError(f"lambda_p must be >= 0, got {self.lambda_p}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")


def encode2(m: StackedCae, x) -> np.ndarray:
    """h' = f'(f(x))."""
    return encode(m.layer2, encode(m.layer1, x))


def decode2(m: StackedCae, h2) -> np.ndarray:
    """g(g'(h'))."""
    return decode(m.layer1, decode(m.layer2, h2))


def composed_jacobian(m: StackedCae, x) -> Matrix:
    """
    Jacobian of the top layer with respect to the input, J'(f(x)) J(x).
    """
    h = encode(m.layer1, x)
    return jacobian(m.layer2, h) @ jacobian(m.layer1, x)


def features(model, data) -> np.ndarray:
    """Top-layer features of a single layer or a stack."""
    if isinstance(model, StackedCae):
        return encode2(model, data)
    return encode(model, data)


def perturbations(layer1: CaeParams, h: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """
    Row-wise J(x) J(x)^T eps for a batch, from cached first-layer features.

    With J = diag(s) W and s = h (1 - h): J J^T eps = s * (W (W^T (s * eps))).
    """
    s = h * (1.0 - h)
    return s * (((s * eps) @ layer1.w) @ layer1.w.T)


def _invariance(
    layer2: CaeParams, h: np.ndarray, delta: np.ndarray, clip: bool, with_grad: bool
) -> tuple[float, Gradients | None]:
    """
    Sum over rows of ||f'(h + delta) - f'(h)||^2 and its gradient w.r.t. layer 2.

    The perturbation is a constant with respect to the layer-2 parameters.
    """
    moved = h + delta
    if clip:
        moved = np.clip(moved, CLIP_EPS, 1.0 - CLIP_EPS)

    top_moved = encode(layer2, moved)
    top = encode(layer2, h)
    diff = top_moved - top
    value = float(np.sum(diff * diff))
    if not with_grad:
        return value, None

    d_moved = 2.0 * diff * top_moved * (1.0 - top_moved)
    d_base = -2.0 * diff * top * (1.0 - top)
    grads = Gradients(
        dw=d_moved.T @ moved + d_base.T @ h,
        db_h=d_moved.sum(axis=0) + d_base.sum(axis=0),
        db_r=np.zeros(layer2.input_size),
    )
    return value, grads


def _draw_noise(rng: Rng, n: int, k: int, sigma: float) -> np.ndarray:
    # one eps per example per evaluation
    return gaussian_batch(rng, n, k, sigma)


def _batch(m: StackedCae, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("Batch must be a non-empty list of vectors")
    if x.shape[1] != m.input_size:
        raise ValueError(f"Batch vectors have size {x.shape[1]}, expected {m.input_size}")
    return x


def cae_plus_objective(
    m: StackedCae,
    batch,
    lam: float,
    lambda_p: float,
    sigma: float,
    rng: Rng,
    clip: bool = True,
) -> float:
    """
    Layer-2 CAE objective on h = f(x) plus lambda_p times the stochastic invariance term.

    Layer 1 is frozen. One eps ~ N(0, sigma^2 I_k) is drawn per example.
    """
    x = _batch(m, batch)
    h = encode(m.layer1, x)
    recon, penalty = objective_terms(m.layer2, h)
    eps = _draw_noise(rng, h.shape[0], h.shape[1], sigma)
    inv, _ = _invariance(m.layer2, h, perturbations(m.layer1, h, eps), clip, with_grad=False)
    return recon + lam * penalty + lambda_p * inv


def cae_plus_gradient(
    m: StackedCae,
    batch,
    lam: float,
    lambda_p: float,
    sigma: float,
    rng: Rng,
    clip: bool = True,
) -> Gradients:
    """
    Analytic gradient of `cae_plus_objective` with respect to the layer-2 parameters.

    Consumes the same draws as `cae_plus_objective` for the same rng state.
    """
    x = _batch(m, batch)
    h = encode(m.layer1, x)
    eps = _draw_noise(rng, h.shape[0], h.shape[1], sigma)
    return _layer2_gradient(m.layer1, m.layer2, h, eps, lam, lambda_p, clip)


def _layer2_gradient(
    layer1: CaeParams,
    layer2: CaeParams,
    h: np.ndarray,
    eps: np.ndarray,
    lam: float,
    lambda_p: float,
    clip: bool,
) -> Gradients:
    grads = gradient(layer2, h, lam)
    if lambda_p == 0:
        return grads
    _, inv_grads = _invariance(layer2, h, perturbations(layer1, h, eps), clip, with_grad=True)
    return Gradients(
        dw=grads.dw + lambda_p * inv_grads.dw,
        db_h=grads.db_h + lambda_p * inv_grads.db_h,
        db_r=grads.db_r,
    )


def mean_invariance(
    layer1: CaeParams, layer2: CaeParams, x, sigma: float, rng: Rng, clip: bool = True
) -> float:
    """Mean over examples of ||f'(f(x) + J J^T eps) - f'(f(x))||^2, one eps per example."""
    h = encode(layer1, x)
    eps = _draw_noise(rng, h.shape[0], h.shape[1], sigma)
    value, _ = _invariance(layer2, h, perturbations(layer1, h, eps), clip, with_grad=False)
    return value / h.shape[0]


def train_layer2(data, layer1: CaeParams, hyper: CaePlusHyper) -> tuple[CaeParams, TrainingLog]:
    """
    Train layer 2 on frozen layer-1 features.

    lambda_p = 0 trains a plain second CAE layer (identical to `model.train`
    on the cached features); lambda_p > 0 adds the invariance term with a
    fresh eps for every presentation of an example.

    Args:
        data: Raw inputs (n, d) in [0, 1], or a Dataset
        layer1: Trained, frozen first layer
        hyper: Layer-2 hyper-parameters

    Returns:
        Tuple of (layer-2 parameters, training log with the invariance trajectory)
    """
    x = as_matrix(getattr(data, "items", data), "training data")
    if x.shape[1] != layer1.input_size:
        raise ValueError(
            f"Data dimension {x.shape[1]} does not match layer 1 input size {layer1.input_size}"
        )

    layer_hyper = hyper.layer
    feats = encode(layer1, x)
    k = feats.shape[1]

    rng = make_rng(layer_hyper.seed)
    noise_rng = make_rng(layer_hyper.seed, NOISE_STREAM)
    params = init_params(k, layer_hyper.hidden, layer_hyper.init_scale, rng)

    logger.info(
        f"Training layer 2 k={k} -> k'={layer_hyper.hidden} "
        f"(lambda={layer_hyper.lam}, lambda_p={hyper.lambda_p}, sigma={hyper.sigma})"
    )

    def step(p: CaeParams, idx: np.ndarray) -> Gradients:
        if hyper.lambda_p == 0:
            return gradient(p, feats[idx], layer_hyper.lam)
        eps = _draw_noise(noise_rng, len(idx), k, hyper.sigma)
        return _layer2_gradient(
            layer1, p, feats[idx], eps, layer_hyper.lam, hyper.lambda_p, hyper.clip
        )

    def evaluate(p: CaeParams, epoch: int) -> EpochRecord:
        n = feats.shape[0]
        recon, penalty = objective_terms(p, feats)
        eval_rng = make_rng(layer_hyper.seed, EVAL_NOISE_STREAM)
        eps = _draw_noise(eval_rng, n, k, hyper.sigma)
        inv, _ = _invariance(p, feats, perturbations(layer1, feats, eps), hyper.clip, False)
        return EpochRecord(
            epoch=epoch,
            objective=(recon + layer_hyper.lam * penalty + hyper.lambda_p * inv) / n,
            reconstruction=recon / n,
            penalty=penalty / n,
            invariance=inv / n,
        )

    return run_sgd(params, x.shape[0], layer_hyper, rng, step, evaluate)
