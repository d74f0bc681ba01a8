import math

import numpy as np
import pytest

from gibbsmf.rng import HYPER_DRAW, RngStream, stream_for


def test_identical_keys_give_identical_sequences():
    a = stream_for(42, 3, 1, 17).raw64(32)
    b = stream_for(42, 3, 1, 17).raw64(32)
    assert np.array_equal(a, b)
    x = stream_for(9, 1, 0, 5).normals(100)
    y = stream_for(9, 1, 0, 5).normals(100)
    assert np.array_equal(x, y)


def test_distinct_indices_give_distinct_streams():
    a = stream_for(42, 0, 0, 0).raw64()
    b = stream_for(42, 0, 0, 1).raw64()
    assert a != b


def test_distinct_seeds_give_distinct_streams():
    a = stream_for(42, 0, 0, 0).raw64(4)
    b = stream_for(43, 0, 0, 0).raw64(4)
    assert not np.array_equal(a, b)


def test_distinct_iterations_and_modes_give_distinct_streams():
    base = stream_for(7, 1, 1, 1).raw64(4)
    assert not np.array_equal(base, stream_for(7, 2, 1, 1).raw64(4))
    assert not np.array_equal(base, stream_for(7, 1, 2, 1).raw64(4))


def test_purpose_indices_disjoint_from_entities():
    a = stream_for(1, 1, 0, HYPER_DRAW).raw64(4)
    b = stream_for(1, 1, 0, 0).raw64(4)
    assert not np.array_equal(a, b)


def test_gamma_moments():
    # Gamma(3, rate 2): mean 1.5, variance 3/4.
    s = stream_for(123, 0, 0, 0)
    draws = np.array([s.gamma(3.0, 2.0) for _ in range(100_000)])
    assert abs(draws.mean() - 1.5) < 0.03
    se_var = (3 / 4) * math.sqrt(2 / (draws.size - 1))
    assert abs(draws.var(ddof=1) - 0.75) < 5 * se_var + 0.02


def test_gamma_shape_below_one():
    s = stream_for(5, 0, 0, 0)
    draws = np.array([s.gamma(0.5, 1.0) for _ in range(100_000)])
    assert abs(draws.mean() - 0.5) < 5 * math.sqrt(0.5 / draws.size)
    assert (draws > 0).all()


def test_normal_moments():
    s = stream_for(77, 0, 0, 0)
    draws = s.normals(100_000)
    assert abs(draws.mean()) < 0.02
    assert abs(draws.var(ddof=1) - 1.0) < 0.02


def test_beta_moments():
    # Beta(2, 3): mean 0.4, variance 0.04.
    s = stream_for(42, 0, 0, 0)
    draws = np.array([s.beta(2.0, 3.0) for _ in range(100_000)])
    se = math.sqrt(0.04 / draws.size)
    assert abs(draws.mean() - 0.4) < 5 * se
    assert ((draws > 0) & (draws < 1)).all()


def test_bernoulli_degenerate_and_moments():
    s = stream_for(8, 0, 0, 0)
    assert all(s.bernoulli(0.0) == 0 for _ in range(100))
    assert all(s.bernoulli(1.0) == 1 for _ in range(100))
    draws = np.array([s.bernoulli(0.3) for _ in range(100_000)])
    assert abs(draws.mean() - 0.3) < 5 * math.sqrt(0.21 / draws.size)


def test_parameter_validation():
    s = stream_for(0, 0, 0, 0)
    with pytest.raises(ValueError):
        s.gamma(0.0, 1.0)
    with pytest.raises(ValueError):
        s.gamma(1.0, -2.0)
    with pytest.raises(ValueError):
        s.beta(0.0, 1.0)
    with pytest.raises(ValueError):
        s.bernoulli(1.5)
    with pytest.raises(ValueError):
        stream_for(0, 0, 300, 0)
    with pytest.raises(ValueError):
        stream_for(0, 0, 0, 1 << 60)


def test_vector_samplers_match_parameterization():
    s = stream_for(3, 0, 0, 0)
    g = s.gammas(np.array([2.0, 50.0]), np.array([1.0, 10.0]))
    assert g.shape == (2,)
    assert (g > 0).all()
    b = s.betas(np.array([5.0, 5.0]), np.array([5.0, 5.0]))
    assert ((b > 0) & (b < 1)).all()


def test_stream_type():
    assert isinstance(stream_for(0, 0, 0, 0), RngStream)
