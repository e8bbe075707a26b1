import math

import numpy as np
import pytest

from secgd.dp import (
    DpParams,
    aggregate_noise_variance,
    clip_l2,
    gaussian_sigma,
    local_dp_noise,
)


def make_params(**overrides):
    base = dict(epsilon=1.0, delta=0.125, l2_sensitivity=1.0,
                n_clients=4, n_honest=4)
    base.update(overrides)
    return DpParams(**base)


class TestGaussianSigma:
    def test_reference_value(self):
        # eps=1, delta=1.25e-1, Delta2=1: sigma^2 just above sqrt(2 ln 10)
        sigma = gaussian_sigma(make_params())
        assert sigma == pytest.approx(1.465, abs=1e-3)
        assert sigma**2 > math.sqrt(2 * math.log(10))

    def test_linearity_in_sensitivity(self):
        s1 = gaussian_sigma(make_params(l2_sensitivity=1.0))
        s2 = gaussian_sigma(make_params(l2_sensitivity=2.0))
        assert s2**2 == pytest.approx(2 * s1**2)

    def test_inverse_in_epsilon(self):
        s1 = gaussian_sigma(make_params(epsilon=1.0))
        s2 = gaussian_sigma(make_params(epsilon=2.0))
        assert s2**2 == pytest.approx(s1**2 / 2)

    def test_rejects_bad_privacy_params(self):
        with pytest.raises(ValueError):
            make_params(epsilon=0.0)
        with pytest.raises(ValueError):
            make_params(delta=1.0)
        with pytest.raises(ValueError):
            make_params(delta=0.0)
        with pytest.raises(ValueError):
            make_params(l2_sensitivity=0.0)
        with pytest.raises(ValueError):
            make_params(n_honest=1)
        with pytest.raises(ValueError):
            make_params(n_honest=5)  # more honest than clients


class TestClipL2:
    def test_on_boundary_unchanged(self):
        g = np.array([3.0, 4.0])
        assert np.array_equal(clip_l2(g, 5.0), g)

    def test_scales_down(self):
        assert clip_l2(np.array([6.0, 8.0]), 5.0) == pytest.approx([3.0, 4.0])

    def test_zero_vector(self):
        assert np.array_equal(clip_l2(np.zeros(4), 1.0), np.zeros(4))

    def test_never_increases_norm_and_idempotent(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            g = rng.normal(scale=3.0, size=5)
            out = clip_l2(g, 2.0)
            assert np.linalg.norm(out) <= 2.0 + 1e-12
            assert np.array_equal(clip_l2(out, 2.0), out)

    def test_rejects_bad_bound(self):
        with pytest.raises(ValueError):
            clip_l2(np.ones(2), 0.0)


class TestLocalNoise:
    def test_zero_sigma_is_identity(self):
        g = np.array([1.0, -2.0])
        out = local_dp_noise(g, 0.0, 4, np.random.default_rng(0))
        assert np.array_equal(out, g)

    def test_honest_sum_reaches_target_variance(self):
        rng = np.random.default_rng(1)
        sigma, n_honest, trials = 1.7, 4, 10**5
        total = np.zeros(trials)
        for _ in range(n_honest):
            total += local_dp_noise(np.zeros(trials), sigma, n_honest, rng)
        assert np.var(total) == pytest.approx(sigma**2, rel=0.1)

    def test_per_client_variance(self):
        rng = np.random.default_rng(2)
        sigma, n_honest = 2.0, 5
        noise = local_dp_noise(np.zeros(10**5), sigma, n_honest, rng)
        assert np.var(noise) == pytest.approx(sigma**2 / n_honest, rel=0.1)


def test_variance_accounting():
    params = make_params(n_clients=6, n_honest=4)
    sigma = 2.0
    v = aggregate_noise_variance(params, sigma)
    assert v["per_client"] == pytest.approx(1.0)
    assert v["honest_only"] == pytest.approx(4.0)
    assert v["all_clients"] == pytest.approx(6.0)
    assert v["colluders_full"] == pytest.approx((1 + 6 - 4) * 4.0)
