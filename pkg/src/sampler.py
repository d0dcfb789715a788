"""
Jacobian-driven Markov chain sampling from a trained CAE.

Each step perturbs the current representation by dh = J J^T eps (or by eps
alone in the isotropic ablation), decodes, and re-encodes:

    x_t = g(h_{t-1} + dh),  h_t = f(x_t)

with J the encoder Jacobian at x_{t-1}. Stacked models use the composed
encoder, decoder and input-to-top Jacobian.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .model import CaeParams, cross_entropy, decode, encode, jacobian
from .numerics import Matrix, Rng, Vector, gaussian_batch, gaussian_vector, make_rng, svd
from .stack import StackedCae, composed_jacobian, decode2, encode2

logger = logging.getLogger(__name__)

MODES = ("jacobian", "isotropic")
INITS = ("uniform", "example", "vector")


class ChainDivergenceError(RuntimeError):
    """Raised when a chain state becomes non-finite."""


@dataclass(frozen=True)
class ChainConfig:
    sigma: float
    steps: int
    mode: str = "jacobian"
    seed: int = 0
    init: str = "uniform"
    init_index: int = 0
    init_vector: np.ndarray | None = None
    record_every: int = 1
    burn_in: int = 100

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.mode not in MODES:
            raise ValueError(f"Unknown sampler mode '{self.mode}', expected one of {MODES}")
        if self.init not in INITS:
            raise ValueError(f"Unknown chain init '{self.init}', expected one of {INITS}")
        if self.record_every < 1:
            raise ValueError(f"record_every must be >= 1, got {self.record_every}")


@dataclass
class ChainTrace:
    """
    Recorded states of one chain: step index, x_t, h_t and reconstruction error.

    Traces read back from disk carry no config.
    """

    config: ChainConfig | None = None
    steps: list[int] = field(default_factory=list)
    xs: list[Vector] = field(default_factory=list)
    hs: list[Vector] = field(default_factory=list)
    recon_errors: list[float] = field(default_factory=list)

    def record(self, t: int, x: Vector, h: Vector, error: float):
        self.steps.append(t)
        self.xs.append(x)
        self.hs.append(h)
        self.recon_errors.append(error)

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class TangentBasis:
    directions: Matrix  # m x d, orthonormal rows
    singular_values: Vector


@dataclass(frozen=True)
class _Maps:
    encode: Callable
    decode: Callable
    jacobian: Callable
    input_size: int
    hidden_size: int


def _maps(model) -> _Maps:
    if isinstance(model, StackedCae):
        return _Maps(
            encode=lambda x: encode2(model, x),
            decode=lambda h: decode2(model, h),
            jacobian=lambda x: composed_jacobian(model, x),
            input_size=model.input_size,
            hidden_size=model.hidden_size,
        )
    if isinstance(model, CaeParams):
        return _Maps(
            encode=lambda x: encode(model, x),
            decode=lambda h: decode(model, h),
            jacobian=lambda x: jacobian(model, x),
            input_size=model.input_size,
            hidden_size=model.hidden_size,
        )
    raise TypeError(f"Unsupported model type: {type(model).__name__}")


def model_jacobian(model, x) -> Matrix:
    return _maps(model).jacobian(np.asarray(x, dtype=np.float64))


def reconstruction_error(model, x) -> float:
    maps = _maps(model)
    return cross_entropy(x, maps.decode(maps.encode(x)))


def perturb(j: Matrix, eps) -> np.ndarray:
    """
    dh = J J^T eps, computed as J (J^T eps).

    `eps` may be one vector (k,) or a batch (n, k); rows are perturbed independently.
    """
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape[-1] != j.shape[0]:
        raise ValueError(f"Noise size {eps.shape[-1]} does not match Jacobian rows {j.shape[0]}")
    return (eps @ j) @ j.T


def initial_state(maps: _Maps, cfg: ChainConfig, rng: Rng, data=None) -> Vector:
    if cfg.init == "uniform":
        return rng.uniform(0.0, 1.0, size=maps.input_size)
    if cfg.init == "example":
        items = getattr(data, "items", data)
        if items is None:
            raise ValueError("Chain init 'example' needs a dataset")
        return np.array(items[cfg.init_index], dtype=np.float64)
    if cfg.init_vector is None:
        raise ValueError("Chain init 'vector' needs init_vector")
    x0 = np.array(cfg.init_vector, dtype=np.float64)
    if x0.shape != (maps.input_size,):
        raise ValueError(f"init_vector has shape {x0.shape}, expected ({maps.input_size},)")
    return x0


def chain_steps(
    model, x0: Vector, sigma: float, steps: int, mode: str, rng: Rng
) -> Iterator[tuple[int, Vector, Vector]]:
    """
    Yield (t, x_t, h_t) for t = 1..steps.

    The next state depends only on the current x and the rng stream, so a
    chain resumed from (x_t, copy of rng) reproduces the same suffix.

    Raises:
        ChainDivergenceError: If a state becomes non-finite
    """
    maps = _maps(model)
    x = np.asarray(x0, dtype=np.float64)
    h = maps.encode(x)

    for t in range(1, steps + 1):
        eps = gaussian_vector(rng, maps.hidden_size, sigma)
        if mode == "jacobian":
            delta = perturb(maps.jacobian(x), eps)
        else:
            delta = eps

        x = maps.decode(h + delta)
        h = maps.encode(x)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(h))):
            raise ChainDivergenceError(f"Chain state became non-finite at step {t} ({mode} mode)")
        yield t, x, h


def run_chain(model, cfg: ChainConfig, data_for_init=None) -> ChainTrace:
    """
    Run one chain and record every `record_every`-th state (plus the start).

    The initial state is drawn before any noise, so chains that differ only
    in mode share x_0 and the noise stream.
    """
    maps = _maps(model)
    rng = make_rng(cfg.seed)
    x0 = initial_state(maps, cfg, rng, data_for_init)

    trace = ChainTrace(config=cfg)
    h0 = maps.encode(x0)
    trace.record(0, x0, h0, cross_entropy(x0, maps.decode(h0)))

    for t, x, h in chain_steps(model, x0, cfg.sigma, cfg.steps, cfg.mode, rng):
        if t % cfg.record_every == 0:
            trace.record(t, x, h, cross_entropy(x, maps.decode(h)))

    logger.debug(
        f"Chain seed={cfg.seed} mode={cfg.mode}: {len(trace)} records, "
        f"final recon error {trace.recon_errors[-1]:.4f}"
    )
    return trace


def run_chains(model, configs: list[ChainConfig], data_for_init=None, workers: int = 1) -> list[ChainTrace]:
    """Run independent chains in parallel; results keep the order of `configs`."""
    if workers <= 1 or len(configs) <= 1:
        return [run_chain(model, cfg, data_for_init) for cfg in configs]
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="chain") as pool:
        return list(pool.map(lambda cfg: run_chain(model, cfg, data_for_init), configs))


def harvest(traces: list[ChainTrace], burn_in: int, thin: int = 1) -> np.ndarray:
    """Stack the recorded states at step >= burn_in, keeping every `thin`-th one."""
    samples = []
    for trace in traces:
        kept = [x for t, x in zip(trace.steps, trace.xs) if t >= burn_in]
        samples.extend(kept[::thin])
    if not samples:
        dim = traces[0].xs[0].shape[0] if traces and traces[0].xs else 0
        return np.empty((0, dim))
    return np.vstack(samples)


def cross_initialization_gap(traces: list[ChainTrace], burn_in: int) -> float:
    """
    Spread (max - min) of post-burn-in mean reconstruction error across chains.

    Chains started from different initializations that converge to the same
    stationary regime give a small gap.
    """
    means = []
    for trace in traces:
        errors = [e for t, e in zip(trace.steps, trace.recon_errors) if t >= burn_in]
        if errors:
            means.append(float(np.mean(errors)))
    if len(means) < 2:
        return 0.0
    return max(means) - min(means)


def empirical_step_covariance(model, x, sigma: float, n_draws: int, rng: Rng) -> Matrix:
    """
    Monte-Carlo estimate of E[dh dh^T] at a fixed x (zero mean known).

    Expected value under the std convention: sigma^2 (J J^T)^2.
    """
    if n_draws < 1000:
        raise ValueError(f"n_draws must be >= 1000, got {n_draws}")
    j = model_jacobian(model, x)
    eps = gaussian_batch(rng, n_draws, j.shape[0], sigma)
    deltas = perturb(j, eps)
    return deltas.T @ deltas / n_draws


def tangent_basis(model, x, m: int) -> TangentBasis:
    """Top-m right singular vectors of J(x) with their singular values."""
    j = model_jacobian(model, x)
    if m < 1 or m > min(j.shape):
        raise ValueError(f"m must be in [1, {min(j.shape)}], got {m}")
    _, s, v = svd(j)
    return TangentBasis(directions=v[:, :m].T.copy(), singular_values=s[:m].copy())


def spectrum_profile(model, points) -> list[Vector]:
    """Descending singular values of J at each point."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[0] == 0:
        raise ValueError("spectrum_profile needs at least one point")
    return [np.linalg.svd(model_jacobian(model, p), compute_uv=False) for p in points]


def energy_fraction(spectrum: Vector, m: int) -> float:
    """Share of sum(s^2) carried by the top-m singular values (0 for a zero spectrum)."""
    total = float(np.sum(spectrum**2))
    if total == 0.0:
        return 0.0
    return float(np.sum(spectrum[:m] ** 2) / total)
