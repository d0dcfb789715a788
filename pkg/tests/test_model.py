"""Tests for the single-layer CAE: forward maps, loss, Jacobian, gradients, training."""

import math

import numpy as np
import pytest
import torch

from conftest import CIRCLE_HYPER, finite_difference, flat, random_params, relative_error, unflat
from src.model import (
    CaeHyper,
    CaeParams,
    DivergenceError,
    Gradients,
    contractive_penalty,
    cross_entropy,
    decode,
    encode,
    evaluate_layer,
    gradient,
    init_params,
    jacobian,
    objective,
    run_sgd,
    train,
)
from src.numerics import make_rng
from src.sampler import energy_fraction, spectrum_profile


def zero_params(d: int, k: int) -> CaeParams:
    return CaeParams(w=np.zeros((k, d)), b_h=np.zeros(k), b_r=np.zeros(d))


def scalar_params(w: float) -> CaeParams:
    return CaeParams(w=np.array([[w]]), b_h=np.zeros(1), b_r=np.zeros(1))


def test_encode_zero_weights_gives_half():
    assert np.array_equal(encode(zero_params(5, 3), np.full(5, 0.7)), np.full(3, 0.5))


def test_encode_saturates():
    p = CaeParams(w=np.zeros((2, 3)), b_h=np.array([-50.0, 0.0]), b_r=np.zeros(3))
    assert encode(p, np.ones(3))[0] < 1e-20


def test_encode_scalar():
    assert encode(scalar_params(1.0), np.array([1.0]))[0] == pytest.approx(0.731059, abs=1e-6)


def test_encode_output_inside_unit_interval(params, rng):
    h = encode(params, rng.uniform(size=(20, 6)))
    assert np.all(h > 0) and np.all(h < 1)


def test_encode_rejects_wrong_size(params):
    with pytest.raises(ValueError):
        encode(params, np.zeros(5))


def test_decode_values():
    assert np.array_equal(decode(zero_params(4, 2), np.full(2, 0.3)), np.full(4, 0.5))
    p = CaeParams(w=np.zeros((1, 2)), b_h=np.zeros(1), b_r=np.array([50.0, 0.0]))
    assert 1.0 - decode(p, np.array([0.5]))[0] < 1e-20
    assert decode(scalar_params(2.0), np.array([0.5]))[0] == pytest.approx(0.731059, abs=1e-6)


def test_cross_entropy_values():
    assert cross_entropy(np.array([0.5]), np.array([0.5])) == pytest.approx(math.log(2.0))
    value = cross_entropy(np.array([1.0, 0.0]), np.array([0.731059, 0.268941]))
    assert value == pytest.approx(0.626523, abs=1e-5)


def test_cross_entropy_perfect_binary_reconstruction_is_near_zero():
    x = np.array([1.0, 0.0, 1.0, 1.0])
    assert 0 <= cross_entropy(x, x) < 1e-5


def test_cross_entropy_batch_returns_rows():
    x = np.full((3, 2), 0.5)
    np.testing.assert_allclose(cross_entropy(x, x), np.full(3, 2 * math.log(2.0)))


def test_jacobian_special_cases(rng):
    assert np.array_equal(jacobian(zero_params(4, 3), np.full(4, 0.2)), np.zeros((3, 4)))
    w = rng.standard_normal((3, 4))
    p = CaeParams(w=w, b_h=np.zeros(3), b_r=np.zeros(4))
    np.testing.assert_allclose(jacobian(p, np.zeros(4)), 0.25 * w, atol=1e-15)


def test_jacobian_matches_finite_differences(rng):
    for _ in range(5):
        p = random_params(rng, d=7, k=5)
        x = rng.uniform(size=7)
        numeric = finite_difference(lambda z: encode(p, z), x)
        np.testing.assert_allclose(jacobian(p, x), numeric, atol=1e-6)


def test_jacobian_row_norm_bound(params, rng):
    j = jacobian(params, rng.uniform(size=6))
    assert np.all(np.linalg.norm(j, axis=1) <= 0.25 * np.linalg.norm(params.w, axis=1) + 1e-15)


def test_contractive_penalty_values():
    assert contractive_penalty(zero_params(3, 2), np.ones(3)) == 0.0
    assert contractive_penalty(scalar_params(2.0), np.array([0.0])) == pytest.approx(0.25)


def test_contractive_penalty_equals_jacobian_norm(rng):
    """Test the closed-form penalty against ||J||_F^2 over 100 random instances."""
    for _ in range(100):
        d, k = rng.integers(1, 13, size=2)
        p = random_params(rng, d=int(d), k=int(k), scale=1.0)
        x = rng.uniform(size=int(d))
        j = jacobian(p, x)
        assert abs(contractive_penalty(p, x) - np.sum(j * j)) < 1e-12


def test_objective_lambda_zero_is_reconstruction(params, rng):
    batch = rng.uniform(size=(5, 6))
    expected = float(np.sum(cross_entropy(batch, decode(params, encode(params, batch)))))
    assert objective(params, batch, 0.0) == expected


def test_objective_zero_model_binary_input():
    x = np.array([[1.0, 0.0, 1.0]])
    assert objective(zero_params(3, 2), x, 0.5) == pytest.approx(3 * math.log(2.0))


def test_objective_is_additive(params, rng):
    batch = rng.uniform(size=(4, 6))
    total = sum(objective(params, x, 0.3) for x in batch)
    assert objective(params, batch, 0.3) == pytest.approx(total, rel=1e-12)


def test_objective_rejects_empty_batch(params):
    with pytest.raises(ValueError):
        objective(params, np.zeros((0, 6)), 0.1)


def test_gradient_vanishes_at_exact_reconstruction():
    """Test a batch reconstructed exactly (r = x = 0.5) gives zero gradient at lambda = 0."""
    g = gradient(zero_params(4, 3), np.full((2, 4), 0.5), 0.0)
    assert np.all(flat(g) == 0.0)


@pytest.mark.parametrize("lam", [0.0, 0.1, 1.0])
def test_gradient_matches_finite_differences(lam):
    """Test the analytic gradient on random instances with d, k <= 12."""
    gen = make_rng(11)
    for _ in range(7):
        d, k = (int(v) for v in gen.integers(2, 13, size=2))
        p = random_params(gen, d=d, k=k)
        batch = gen.uniform(size=(3, d))
        theta = flat(p)
        numeric = finite_difference(lambda t: objective(unflat(p, t), batch, lam), theta)
        assert relative_error(flat(gradient(p, batch, lam)), numeric) < 1e-4


def test_gradient_matches_autograd(rng):
    """Test against torch autograd of the same objective."""
    p = random_params(rng, d=9, k=7)
    batch = rng.uniform(size=(5, 9))
    lam = 0.7

    w = torch.tensor(p.w, requires_grad=True)
    b_h = torch.tensor(p.b_h, requires_grad=True)
    b_r = torch.tensor(p.b_r, requires_grad=True)
    x = torch.tensor(batch)
    h = torch.sigmoid(x @ w.T + b_h)
    r = torch.sigmoid(h @ w + b_r)
    recon = -(x * torch.log(r) + (1 - x) * torch.log1p(-r)).sum()
    penalty = ((h * (1 - h)) ** 2 @ (w * w).sum(dim=1)).sum()
    (recon + lam * penalty).backward()

    g = gradient(p, batch, lam)
    np.testing.assert_allclose(g.dw, w.grad.numpy(), rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(g.db_h, b_h.grad.numpy(), rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(g.db_r, b_r.grad.numpy(), rtol=1e-9, atol=1e-12)


def test_penalty_gradient_is_linear_in_lambda(params, rng):
    batch = rng.uniform(size=(4, 6))
    g0, g1, g2 = (flat(gradient(params, batch, lam)) for lam in (0.0, 1.0, 2.0))
    np.testing.assert_allclose(g2 - g0, 2 * (g1 - g0), atol=1e-10)


def test_init_params_range():
    p = init_params(10, 6, 2.0, make_rng(0))
    bound = 2.0 * math.sqrt(6.0 / 16)
    assert np.all(np.abs(p.w) <= bound)
    assert np.all(p.b_h == 0) and np.all(p.b_r == 0)


def test_hyper_validation():
    with pytest.raises(ValueError):
        CaeHyper(hidden=0)
    with pytest.raises(ValueError):
        CaeHyper(hidden=4, lam=-1.0)
    with pytest.raises(ValueError):
        CaeHyper(hidden=4, learning_rate=0.0)


def test_params_reject_inconsistent_shapes():
    with pytest.raises(ValueError):
        CaeParams(w=np.zeros((3, 4)), b_h=np.zeros(4), b_r=np.zeros(4))
    with pytest.raises(ValueError):
        CaeParams(w=np.full((1, 1), np.nan), b_h=np.zeros(1), b_r=np.zeros(1))


def test_train_zero_epochs_returns_initialization(rng):
    data = rng.uniform(size=(30, 5))
    hyper = CaeHyper(hidden=3, epochs=0, seed=4)
    params, log = train(data, hyper)
    expected = init_params(5, 3, hyper.init_scale, make_rng(4))
    assert np.array_equal(params.w, expected.w)
    assert len(log.records) == 1 and log.initial.epoch == 0


def test_train_is_deterministic(rng):
    data = rng.uniform(size=(50, 5))
    hyper = CaeHyper(hidden=4, epochs=3, batch_size=7, seed=2)
    a, log_a = train(data, hyper)
    b, log_b = train(data, hyper)
    assert np.array_equal(a.w, b.w) and np.array_equal(a.b_h, b.b_h) and np.array_equal(a.b_r, b.b_r)
    assert log_a.to_rows() == log_b.to_rows()


def test_train_rejects_out_of_range_inputs():
    with pytest.raises(ValueError):
        train(np.array([[0.5, 1.5]]), CaeHyper(hidden=2))


def test_run_sgd_raises_on_non_finite_parameters(params):
    """Test the divergence guard with a gradient that overflows the parameters."""
    hyper = CaeHyper(hidden=4, epochs=1, batch_size=2)

    def step(p, idx):
        return Gradients(dw=np.full(p.w.shape, np.inf), db_h=np.zeros(4), db_r=np.zeros(6))

    def evaluate(p, epoch):
        return evaluate_layer(p, np.full((4, 6), 0.5), 0.0, epoch)

    with pytest.raises(DivergenceError) as info:
        run_sgd(params, 4, hyper, make_rng(0), step, evaluate)
    assert info.value.epoch == 1 and info.value.step == 0


@pytest.mark.slow
def test_training_lowers_objective_on_circle(trained_circle):
    _, log = trained_circle
    assert log.final.objective < log.initial.objective


@pytest.mark.slow
def test_training_concentrates_jacobian_spectrum(circle_data, trained_circle):
    """Test that training on a 1-D manifold concentrates the Jacobian spectrum."""
    params, _ = trained_circle
    points = circle_data.items[:200]
    initial = init_params(16, 32, CIRCLE_HYPER.init_scale, make_rng(CIRCLE_HYPER.seed))

    trained_spectra = spectrum_profile(params, points)
    initial_spectra = spectrum_profile(initial, points)
    trained_energy = np.mean([energy_fraction(s, 2) for s in trained_spectra])
    initial_energy = np.mean([energy_fraction(s, 2) for s in initial_spectra])
    assert trained_energy > 0.8
    assert trained_energy > initial_energy

    trained_ratio = np.mean([s[0] ** 2 / np.sum(s**2) for s in trained_spectra])
    initial_ratio = np.mean([s[0] ** 2 / np.sum(s**2) for s in initial_spectra])
    assert trained_ratio > initial_ratio
