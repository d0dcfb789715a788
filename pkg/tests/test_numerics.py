"""Tests for random streams, SVD and log-sum-exp."""

import math

import numpy as np
import pytest

from src.numerics import gaussian_batch, gaussian_vector, logsumexp, make_rng, standard_error, svd


def test_zero_std_returns_zero_vector():
    """Test that std = 0 yields exact zeros."""
    assert np.array_equal(gaussian_vector(make_rng(5), 3, 0.0), np.zeros(3))


def test_zero_std_keeps_stream_aligned():
    """Test that a std = 0 draw consumes the same randomness as any other draw."""
    a, b = make_rng(5), make_rng(5)
    gaussian_vector(a, 4, 0.0)
    gaussian_vector(b, 4, 2.0)
    assert np.array_equal(gaussian_vector(a, 3, 1.0), gaussian_vector(b, 3, 1.0))


def test_gaussian_moments():
    """Test sample mean and variance of 10^5 draws."""
    assert abs(np.mean(gaussian_vector(make_rng(0), 100_000, 1.0))) < 0.02
    var = np.var(gaussian_vector(make_rng(1), 100_000, 2.0))
    assert var == pytest.approx(4.0, rel=0.05)


def test_same_seed_same_stream():
    assert np.array_equal(gaussian_vector(make_rng(9), 50, 1.0), gaussian_vector(make_rng(9), 50, 1.0))


def test_streams_are_independent():
    """Test that different stream indices of one seed differ."""
    a = gaussian_vector(make_rng(9, stream=0), 50, 1.0)
    b = gaussian_vector(make_rng(9, stream=1), 50, 1.0)
    assert not np.array_equal(a, b)


def test_gaussian_vector_rejects_bad_arguments():
    with pytest.raises(ValueError):
        gaussian_vector(make_rng(0), 0, 1.0)
    with pytest.raises(ValueError):
        gaussian_vector(make_rng(0), 3, -1.0)


def test_gaussian_batch_rows_follow_successive_vectors():
    """Test that batch row i equals the i-th of successive gaussian_vector draws."""
    batch = gaussian_batch(make_rng(3), 4, 5, 0.7)
    rng = make_rng(3)
    rows = np.vstack([gaussian_vector(rng, 5, 0.7) for _ in range(4)])
    assert batch.shape == (4, 5)
    assert np.array_equal(batch, rows)


def test_gaussian_batch_rejects_bad_arguments():
    assert gaussian_batch(make_rng(0), 0, 3, 1.0).shape == (0, 3)
    with pytest.raises(ValueError):
        gaussian_batch(make_rng(0), -1, 3, 1.0)
    with pytest.raises(ValueError):
        gaussian_batch(make_rng(0), 2, 0, 1.0)
    with pytest.raises(ValueError):
        gaussian_batch(make_rng(0), 2, 3, -0.5)


def test_svd_identity_and_zero():
    _, s, _ = svd(np.eye(3))
    np.testing.assert_allclose(s, np.ones(3), atol=1e-15)
    _, s, _ = svd(np.zeros((3, 4)))
    assert np.all(s == 0.0)


@pytest.mark.parametrize("shape", [(5, 8), (8, 5), (12, 12), (64, 64)])
def test_svd_reconstruction(shape):
    """Test a = u diag(s) v^T with orthonormal factors and sorted values."""
    a = make_rng(3).standard_normal(shape)
    u, s, v = svd(a)
    err = np.linalg.norm(a - u @ np.diag(s) @ v.T)
    assert err < 1e-10 * max(1.0, np.linalg.norm(a))
    assert np.all(s >= 0) and np.all(np.diff(s) <= 0)
    np.testing.assert_allclose(v.T @ v, np.eye(v.shape[1]), atol=1e-10)
    np.testing.assert_allclose(u.T @ u, np.eye(u.shape[1]), atol=1e-10)


def test_svd_signs_are_canonical():
    """Test that the largest-magnitude entry of each right vector is positive."""
    _, _, v = svd(make_rng(4).standard_normal((6, 9)))
    pivots = np.argmax(np.abs(v), axis=0)
    assert np.all(v[pivots, np.arange(v.shape[1])] > 0)


def test_svd_diagonal_orders_axes():
    j = np.zeros((3, 5))
    j[0, 2], j[1, 0], j[2, 4] = 2.0, 3.0, 1.0
    _, s, v = svd(j)
    np.testing.assert_allclose(s, [3.0, 2.0, 1.0])
    np.testing.assert_allclose(v[:, 0], np.eye(5)[0], atol=1e-12)
    np.testing.assert_allclose(v[:, 1], np.eye(5)[2], atol=1e-12)
    np.testing.assert_allclose(v[:, 2], np.eye(5)[4], atol=1e-12)


def test_logsumexp_values():
    assert logsumexp([0.0, 0.0]) == pytest.approx(math.log(2.0), abs=1e-15)
    assert logsumexp([1000.0, 1000.0]) == pytest.approx(1000.0 + math.log(2.0), abs=1e-12)


def test_logsumexp_matches_naive_sum():
    v = make_rng(2).standard_normal(10)
    assert logsumexp(v) == pytest.approx(math.log(np.sum(np.exp(v))), abs=1e-12)


def test_logsumexp_shift_invariance():
    v = make_rng(8).standard_normal(20)
    assert logsumexp(v + 37.5) == pytest.approx(logsumexp(v) + 37.5, abs=1e-12)


def test_logsumexp_empty_raises():
    with pytest.raises(ValueError):
        logsumexp([])


def test_standard_error():
    values = np.array([1.0, 2.0, 4.0, 7.0])
    expected = np.std(values, ddof=1) / 2.0
    assert standard_error(values) == pytest.approx(expected)
    assert standard_error([3.0]) == 0.0
