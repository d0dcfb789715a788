"""Tests for the Jacobian chain sampler and the tangent-space diagnostics."""

import copy
import itertools

import numpy as np
import pytest

from conftest import random_params
from src.evaluation import cross_validate_bandwidth, parzen_fit, parzen_loglik
from src.model import CLIP_EPS, CaeParams, jacobian, reconstruct
from src.numerics import make_rng
from src.sampler import (
    ChainConfig,
    ChainDivergenceError,
    ChainTrace,
    chain_steps,
    cross_initialization_gap,
    empirical_step_covariance,
    energy_fraction,
    harvest,
    model_jacobian,
    perturb,
    reconstruction_error,
    run_chain,
    run_chains,
    spectrum_profile,
    tangent_basis,
)
from src.stack import StackedCae, composed_jacobian


def test_perturb_zero_jacobian(rng):
    assert np.all(perturb(np.zeros((4, 6)), rng.standard_normal(4)) == 0.0)


def test_perturb_identity_jacobian_returns_noise(rng):
    eps = rng.standard_normal(5)
    np.testing.assert_array_equal(perturb(np.eye(5), eps), eps)


def test_perturb_matches_explicit_product(rng):
    j = rng.standard_normal((4, 7))
    eps = rng.standard_normal(4)
    np.testing.assert_allclose(perturb(j, eps), j @ j.T @ eps, atol=1e-12)


def test_perturb_lies_in_row_space_image(rng):
    """J J^T eps is orthogonal to the null space of J^T."""
    j = rng.standard_normal((2, 5))
    j = np.vstack([j, j[0] + j[1]])  # rank 2, so J^T has a null vector
    null = np.array([1.0, 1.0, -1.0])
    assert np.allclose(j.T @ null, 0.0)
    assert abs(null @ perturb(j, rng.standard_normal(3))) < 1e-10


def test_perturb_batch_rows_independent(rng):
    j = rng.standard_normal((3, 6))
    eps = rng.standard_normal((4, 3))
    batch = perturb(j, eps)
    for i in range(4):
        np.testing.assert_allclose(batch[i], perturb(j, eps[i]), atol=1e-13)


def test_perturb_rejects_wrong_noise_size(rng):
    with pytest.raises(ValueError):
        perturb(rng.standard_normal((3, 6)), np.zeros(4))


def test_model_jacobian_dispatch(params, rng):
    x = rng.uniform(size=6)
    np.testing.assert_array_equal(model_jacobian(params, x), jacobian(params, x))
    stack = StackedCae(params, random_params(rng, d=4, k=2))
    np.testing.assert_array_equal(model_jacobian(stack, x), composed_jacobian(stack, x))
    with pytest.raises(TypeError):
        model_jacobian("not a model", x)


def test_reconstruction_error_is_non_negative(params, rng):
    assert reconstruction_error(params, rng.uniform(size=6)) >= 0.0


def chain_config(**overrides) -> ChainConfig:
    values = dict(sigma=0.3, steps=10, seed=3)
    values.update(overrides)
    return ChainConfig(**values)


def test_chain_is_deterministic(params):
    a = run_chain(params, chain_config())
    b = run_chain(params, chain_config())
    np.testing.assert_array_equal(np.vstack(a.xs), np.vstack(b.xs))
    assert a.recon_errors == b.recon_errors


def test_different_seeds_give_different_chains(params):
    a = run_chain(params, chain_config(seed=1))
    b = run_chain(params, chain_config(seed=2))
    assert not np.array_equal(a.xs[-1], b.xs[-1])


def test_zero_noise_chain_repeats_reconstruction(params, rng):
    x = rng.uniform(size=6)
    expected = x
    for t, xt, ht in chain_steps(params, x, 0.0, 5, "jacobian", make_rng(0)):
        expected = reconstruct(params, expected)
        np.testing.assert_allclose(xt, expected, atol=1e-15)


def test_chain_resumes_from_copied_state(params, rng):
    """The state after t steps plus a copy of the stream determine the suffix."""
    x0 = rng.uniform(size=6)
    stream = make_rng(8)
    gen = chain_steps(params, x0, 0.4, 10, "jacobian", stream)
    prefix = list(itertools.islice(gen, 5))
    resumed_stream = copy.deepcopy(stream)
    suffix = list(gen)

    x5 = prefix[-1][1]
    resumed = list(chain_steps(params, x5, 0.4, 5, "jacobian", resumed_stream))
    for (_, xa, _), (_, xb, _) in zip(suffix, resumed):
        np.testing.assert_allclose(xa, xb, atol=1e-15)


def test_record_every_counts_records(params):
    trace = run_chain(params, chain_config(steps=10, record_every=3))
    assert trace.steps == [0, 3, 6, 9]
    assert len(trace) == 4 and len(trace.hs) == 4


def test_states_stay_in_unit_interval(params):
    trace = run_chain(params, chain_config(steps=20, sigma=2.0))
    xs = np.vstack(trace.xs)
    assert np.all(xs >= 0.0) and np.all(xs <= 1.0)


def test_modes_share_initial_state(params):
    jac = run_chain(params, chain_config(mode="jacobian"))
    iso = run_chain(params, chain_config(mode="isotropic"))
    np.testing.assert_array_equal(jac.xs[0], iso.xs[0])
    assert not np.array_equal(jac.xs[-1], iso.xs[-1])


def test_example_and_vector_initialization(params, rng):
    data = rng.uniform(size=(5, 6))
    trace = run_chain(params, chain_config(init="example", init_index=2), data_for_init=data)
    np.testing.assert_array_equal(trace.xs[0], data[2])

    v = rng.uniform(size=6)
    trace = run_chain(params, chain_config(init="vector", init_vector=v))
    np.testing.assert_array_equal(trace.xs[0], v)


def test_initialization_errors(params):
    with pytest.raises(ValueError):
        run_chain(params, chain_config(init="example"))
    with pytest.raises(ValueError):
        run_chain(params, chain_config(init="vector"))
    with pytest.raises(ValueError):
        run_chain(params, chain_config(init="vector", init_vector=np.zeros(3)))


@pytest.mark.parametrize(
    "overrides",
    [dict(sigma=0.0), dict(steps=0), dict(mode="langevin"), dict(init="zeros"), dict(record_every=0)],
)
def test_config_validation(overrides):
    with pytest.raises(ValueError):
        chain_config(**overrides)


def test_non_finite_state_raises(params):
    with pytest.raises(ChainDivergenceError):
        run_chain(params, chain_config(init="vector", init_vector=np.full(6, np.nan)))


def test_stacked_chain_runs(params, rng):
    stack = StackedCae(params, random_params(rng, d=4, k=2))
    trace = run_chain(stack, chain_config(steps=5))
    assert len(trace) == 6 and trace.xs[-1].shape == (6,) and trace.hs[-1].shape == (2,)


def test_run_chains_parallel_matches_sequential(params):
    configs = [chain_config(seed=s) for s in range(4)]
    sequential = run_chains(params, configs, workers=1)
    parallel = run_chains(params, configs, workers=3)
    for a, b in zip(sequential, parallel):
        assert a.config == b.config
        np.testing.assert_array_equal(np.vstack(a.xs), np.vstack(b.xs))


def make_trace(steps, values, errors=None) -> ChainTrace:
    trace = ChainTrace()
    for t, v, e in zip(steps, values, errors or [0.0] * len(steps)):
        trace.record(t, np.full(2, float(v)), np.zeros(1), e)
    return trace


def test_harvest_burn_in_and_thinning():
    traces = [make_trace([0, 1, 2, 3, 4], range(5)), make_trace([0, 1, 2, 3, 4], range(10, 15))]
    samples = harvest(traces, burn_in=2, thin=2)
    np.testing.assert_array_equal(samples[:, 0], [2.0, 4.0, 12.0, 14.0])


def test_harvest_empty_after_burn_in():
    samples = harvest([make_trace([0, 1], [0, 1])], burn_in=10)
    assert samples.shape == (0, 2)


def test_cross_initialization_gap():
    a = make_trace([0, 5, 10], [0, 0, 0], errors=[9.0, 1.0, 3.0])
    b = make_trace([0, 5, 10], [0, 0, 0], errors=[0.0, 2.0, 2.0])
    assert cross_initialization_gap([a, b], burn_in=5) == pytest.approx(0.0)
    assert cross_initialization_gap([a, b], burn_in=0) == pytest.approx(13.0 / 3.0 - 4.0 / 3.0)
    assert cross_initialization_gap([a], burn_in=0) == 0.0


def test_step_covariance_zero_jacobian():
    p = CaeParams(w=np.zeros((3, 5)), b_h=np.zeros(3), b_r=np.zeros(5))
    cov = empirical_step_covariance(p, np.full(5, 0.5), 0.5, 1000, make_rng(0))
    assert np.all(cov == 0.0)


def test_step_covariance_requires_enough_draws(params):
    with pytest.raises(ValueError):
        empirical_step_covariance(params, np.full(6, 0.5), 0.5, 999, make_rng(0))


def test_step_covariance_matches_closed_form(params, rng):
    """E[dh dh^T] = sigma^2 (J J^T)^2 with sigma the standard deviation."""
    x = rng.uniform(size=6)
    sigma = 0.7
    j = jacobian(params, x)
    expected = sigma**2 * (j @ j.T) @ (j @ j.T)
    cov = empirical_step_covariance(params, x, sigma, 100_000, make_rng(21))
    assert np.linalg.norm(cov - expected) < 0.05 * np.linalg.norm(expected)


def test_tangent_basis_is_orthonormal(params, rng):
    basis = tangent_basis(params, rng.uniform(size=6), 3)
    assert basis.directions.shape == (3, 6)
    np.testing.assert_allclose(basis.directions @ basis.directions.T, np.eye(3), atol=1e-12)
    assert np.all(np.diff(basis.singular_values) <= 0)


def test_tangent_basis_rejects_bad_m(params):
    with pytest.raises(ValueError):
        tangent_basis(params, np.full(6, 0.5), 5)
    with pytest.raises(ValueError):
        tangent_basis(params, np.full(6, 0.5), 0)


def test_spectrum_profile(params, rng):
    spectra = spectrum_profile(params, rng.uniform(size=(3, 6)))
    assert len(spectra) == 3
    for s in spectra:
        assert s.shape == (4,) and np.all(np.diff(s) <= 0)

    zero = CaeParams(w=np.zeros((4, 6)), b_h=np.zeros(4), b_r=np.zeros(6))
    assert np.all(spectrum_profile(zero, np.full(6, 0.5))[0] == 0.0)
    with pytest.raises(ValueError):
        spectrum_profile(params, np.empty((0, 6)))


def test_energy_fraction():
    assert energy_fraction(np.array([3.0, 4.0]), 1) == pytest.approx(9.0 / 25.0)
    assert energy_fraction(np.array([3.0, 4.0]), 2) == pytest.approx(1.0)
    assert energy_fraction(np.zeros(3), 1) == 0.0


def circle_chain_samples(params, circle_data, seed: int, mode: str) -> np.ndarray:
    cfg = ChainConfig(sigma=0.5, steps=300, mode=mode, seed=seed, init="example", init_index=seed)
    trace = run_chain(params, cfg, data_for_init=circle_data)
    return harvest([trace], burn_in=100)


def points_on_circle(manifold, n: int, seed: int) -> np.ndarray:
    angles = make_rng(seed).uniform(0.0, 2.0 * np.pi, size=n)
    return np.vstack([manifold.point(a) for a in angles])


@pytest.mark.slow
def test_jacobian_chains_stay_closer_to_circle(circle_data, trained_circle):
    """Jacobian-driven chains stay nearer the manifold than isotropic ones in most seeds."""
    params, _ = trained_circle
    manifold = circle_data.geometry.manifold
    wins = 0
    for seed in range(10):
        distances = {
            mode: float(np.mean(manifold.distance(circle_chain_samples(params, circle_data, seed, mode))))
            for mode in ("jacobian", "isotropic")
        }
        wins += distances["jacobian"] < distances["isotropic"]
    assert wins >= 9


@pytest.mark.slow
def test_jacobian_chains_score_higher_parzen_likelihood(circle_data, trained_circle):
    """Held-out circle points are likelier under a Parzen fit to Jacobian samples."""
    params, _ = trained_circle
    manifold = circle_data.geometry.manifold
    validation = points_on_circle(manifold, 200, seed=100)
    test = points_on_circle(manifold, 500, seed=101)
    wins = 0
    for seed in range(10):
        scores = {}
        for mode in ("jacobian", "isotropic"):
            samples = circle_chain_samples(params, circle_data, seed, mode)
            bandwidth = cross_validate_bandwidth(samples, validation)
            scores[mode] = parzen_loglik(parzen_fit(samples, bandwidth), test)[0]
        wins += scores["jacobian"] > scores["isotropic"]
    assert wins >= 8


@pytest.mark.slow
def test_reconstruction_error_stays_bounded_on_long_chain(circle_data, trained_circle):
    params, _ = trained_circle
    cfg = ChainConfig(sigma=0.5, steps=10_000, seed=3, init="example", record_every=10)
    trace = run_chain(params, cfg, data_for_init=circle_data)
    errors = np.asarray(trace.recon_errors)
    assert errors.shape == (1001,)
    assert np.all(np.isfinite(errors)) and np.all(errors >= 0.0)
    # every pixel at the clip floor would cost -ln(CLIP_EPS) each
    assert np.max(errors) < 0.5 * circle_data.dim * -np.log(CLIP_EPS)
