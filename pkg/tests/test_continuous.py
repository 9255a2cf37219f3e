import numpy as np
import pytest

from oracles import grid_posterior_moments, random_continuous_schedule
from syngand.continuous import (ContinuousSchedule, PropertyVector, Standardizer, cosine_alpha,
                                noise_y, posterior_params, reverse_step_y,
                                transition_coefficients, y_from_noise)


def test_cosine_alpha_floor_and_monotone():
    a = cosine_alpha(100)
    assert a[0] == 1.0 and a[-1] == 1e-3 and np.all(np.diff(a) <= 0)


def test_one_step_kernels_compose():
    rng = np.random.default_rng(0)
    for _ in range(50):
        s = random_continuous_schedule(rng)
        alpha, var = 1.0, 0.0
        for t in range(1, s.T + 1):
            a, sd = transition_coefficients(t, s)
            alpha, var = a * alpha, a * a * var + sd * sd
            assert abs(alpha - s.alpha[t]) <= 1e-12
            assert abs(var - s.sigma[t] ** 2) <= 1e-12


def test_noise_round_trip():
    rng = np.random.default_rng(1)
    s = ContinuousSchedule.cosine(100)
    y = rng.standard_normal((50, 3))
    for t in (1, 10, 50, 99, 100):
        yt, eps = noise_y(y, t, s, rng)
        assert np.abs(y_from_noise(yt, eps, t, s) - y).max() <= 1e-10


def test_noise_at_zero_is_identity():
    s = ContinuousSchedule.cosine(10)
    y = np.array([0.3, -1.0])
    yt, eps = noise_y(y, 0, s, np.random.default_rng(0))
    assert np.array_equal(yt, y) and not eps.any()


def test_posterior_matches_quadrature():
    rng = np.random.default_rng(2)
    for _ in range(20):
        s = random_continuous_schedule(rng)
        t = int(rng.integers(2, s.T + 1))
        y0, yt = rng.normal(), rng.normal()
        mu, sd = posterior_params(y0, yt, t, s)
        gm, gs = grid_posterior_moments(s, t, y0, yt)
        assert abs(mu - gm) <= 1e-3 and abs(sd - gs) <= 1e-3


def test_reverse_mean_equals_posterior_mean_given_true_noise():
    rng = np.random.default_rng(3)
    s = ContinuousSchedule.cosine(50)
    y = rng.standard_normal(4)
    for t in (2, 20, 50):
        yt, eps = noise_y(y, t, s, rng)
        mu, _ = posterior_params(y, yt, t, s)
        assert np.abs(reverse_step_y(yt, eps, t, s) - mu).max() <= 1e-9


def test_reverse_step_noise_scale():
    rng = np.random.default_rng(4)
    s = ContinuousSchedule.cosine(50)
    z = np.zeros(200000)
    draws = reverse_step_y(z, z, 30, s, rng)
    _, sd = posterior_params(0.0, 0.0, 30, s)
    assert abs(draws.std() - sd) < 0.01 * sd


def test_reverse_step_at_one_returns_clean_estimate():
    s = ContinuousSchedule.cosine(10)
    assert reverse_step_y(np.array([0.5]), np.array([0.1]), 1, s, np.random.default_rng(0)) \
        == pytest.approx(y_from_noise(np.array([0.5]), np.array([0.1]), 1, s))


def test_timestep_bounds():
    s = ContinuousSchedule.cosine(10)
    with pytest.raises(ValueError):
        posterior_params(0.0, 0.0, 1, s)
    with pytest.raises(ValueError):
        transition_coefficients(11, s)


def test_schedule_validation():
    with pytest.raises(ValueError):
        ContinuousSchedule([0.5, 0.4])
    with pytest.raises(ValueError):
        ContinuousSchedule([1.0, 0.0])


def test_standardizer_round_trip_and_masking():
    vals = np.array([[1.0, 0.0], [3.0, 0.0], [5.0, 7.0]])
    mask = np.array([[True, False], [True, False], [True, True]])
    st = Standardizer.fit(["a", "b"], vals, mask)
    assert st.mean.tolist() == [3.0, 7.0]
    assert st.std[0] == pytest.approx(np.std([1, 3, 5])) and st.std[1] == 1.0
    z = st.standardize(vals)
    assert np.allclose(st.destandardize(z), vals)
    assert Standardizer.from_dict(st.to_dict()).to_dict() == st.to_dict()


def test_property_vector_checks():
    with pytest.raises(ValueError):
        PropertyVector([1.0, np.nan], [True, False])
    with pytest.raises(ValueError):
        PropertyVector([1.0], [True, False])
    assert PropertyVector([0.0, 1.0], [False, True]).d == 2
