import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from visprompt.embedding import (
    GaussianPrior,
    as_embedding,
    cosine,
    dot,
    estimate_gaussian_prior,
    make_rng,
    mean_of_set,
    sample_gaussian,
)
from visprompt.errors import DimensionMismatchError, ValidationError

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_dot_hand_cases():
    assert dot([1, 0], [0, 1]) == 0.0
    assert dot([1, 2], [3, 4]) == 11.0


def test_dot_matches_elementwise_sum(rng):
    for _ in range(1000):
        c = int(rng.integers(1, 40))
        a, b = rng.normal(size=c), rng.normal(size=c)
        expected = 0.0
        for x, y in zip(a.tolist(), b.tolist()):
            expected += x * y
        assert abs(dot(a, b) - expected) <= 1e-12 * max(1.0, abs(expected))


@given(arrays(np.float64, 5, elements=finite), arrays(np.float64, 5, elements=finite),
       arrays(np.float64, 5, elements=finite))
def test_dot_symmetric_and_bilinear(a, b, c):
    assert dot(a, b) == dot(b, a)
    scale = 1.0 + np.abs(a).sum() * np.abs(c).sum() + np.abs(b).sum() * np.abs(c).sum()
    assert abs(dot(a + b, c) - (dot(a, c) + dot(b, c))) <= 1e-10 * scale


def test_cosine_cases(rng):
    assert cosine([1, 0], [0, 1]) == 0.0
    for _ in range(200):
        a, b = rng.normal(size=7), rng.normal(size=7)
        assert cosine(a, a) == pytest.approx(1.0, abs=1e-12)
        ref = sum(x * y for x, y in zip(a, b)) / (np.sqrt(sum(a * a)) * np.sqrt(sum(b * b)))
        assert abs(cosine(a, b) - ref) <= 1e-12


def test_cosine_zero_vector_rejected():
    with pytest.raises(ValidationError):
        cosine([0, 0], [1, 0])


def test_embedding_validation():
    with pytest.raises(ValidationError):
        as_embedding([1.0, np.nan])
    with pytest.raises(ValidationError):
        as_embedding([])
    with pytest.raises(DimensionMismatchError):
        dot([1, 2], [1, 2, 3])


def test_prior_hand_cases():
    p = estimate_gaussian_prior([[1.5, -2.0]])
    np.testing.assert_array_equal(p.mu, [1.5, -2.0])
    np.testing.assert_array_equal(p.sigma, [0.0, 0.0])
    p = estimate_gaussian_prior([[0, 0], [2, 2]])
    np.testing.assert_allclose(p.mu, [1, 1])
    np.testing.assert_allclose(p.sigma, [1, 1])


def test_prior_recovers_generating_parameters(rng):
    p = estimate_gaussian_prior(rng.normal(3.0, 2.0, size=(10_000, 4)))
    assert np.all(np.abs(p.mu - 3.0) < 0.1)
    assert np.all(np.abs(p.sigma - 2.0) < 0.1)


def test_degenerate_prior_reproduces_mean():
    prior = estimate_gaussian_prior([[0.25, -1.0, 3.0]])
    out = sample_gaussian(prior, 50, make_rng(0))
    assert np.array_equal(out, np.tile(prior.mu, (50, 1)))


def test_sampling_statistics_and_determinism():
    prior = GaussianPrior(np.zeros(3), np.ones(3))
    x = sample_gaussian(prior, 100_000, make_rng(9))
    assert np.all(np.abs(x.mean(axis=0)) < 0.02)
    assert np.all(np.abs(x.std(axis=0) - 1.0) < 0.02)
    assert np.array_equal(sample_gaussian(prior, 10, make_rng(4)), sample_gaussian(prior, 10, make_rng(4)))


def test_prior_rejects_negative_sigma():
    with pytest.raises(ValidationError):
        GaussianPrior(np.zeros(2), np.array([1.0, -0.1]))


def test_mean_of_set(rng):
    np.testing.assert_array_equal(mean_of_set([[4.0, 5.0]]), [4.0, 5.0])
    np.testing.assert_allclose(mean_of_set([[0, 2], [2, 0]]), [1, 1])
    for _ in range(100):
        x = rng.normal(size=(int(rng.integers(1, 30)), 6))
        ref = [sum(col) / len(col) for col in x.T.tolist()]
        np.testing.assert_allclose(mean_of_set(x), ref, rtol=0, atol=1e-12)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_rng_replay(seed):
    assert np.array_equal(make_rng(seed).random(5), make_rng(seed).random(5))
