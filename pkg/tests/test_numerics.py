import math

import numpy as np
import pytest

from piavae.errors import NumericalError, ShapeError
from piavae.numerics import (AdamState, GaussianPosterior, adam_step,
                             finite_diff_check, kl_diag_gaussian,
                             multinomial_loglik, reparameterize)


class TestGaussianPosterior:
    def test_logvar_clamped_at_construction(self):
        q = GaussianPosterior(mean=[0.0], logvar=[50.0])
        assert q.logvar[0] == 20.0
        q = GaussianPosterior(mean=[0.0], logvar=[-50.0])
        assert q.logvar[0] == -20.0

    def test_neg_inf_logvar_means_zero_variance(self):
        q = GaussianPosterior(mean=[1.0], logvar=[-np.inf])
        assert q.var[0] == 0.0
        assert q.std[0] == 0.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            GaussianPosterior(mean=[0.0, 1.0], logvar=[0.0])


class TestKlDiagGaussian:
    def test_prior_equals_posterior_gives_zero(self):
        q = GaussianPosterior(mean=np.zeros(4), logvar=np.zeros(4))
        assert kl_diag_gaussian(q) == 0.0

    def test_unit_mean_shift(self):
        # 1/2 (mu^2 + 1 - 1 - 0) = 1/2
        q = GaussianPosterior(mean=[1.0], logvar=[0.0])
        assert kl_diag_gaussian(q) == pytest.approx(0.5, abs=1e-15)

    def test_variance_four(self):
        # 1/2 (0 + 4 - 1 - ln 4) = 0.806853...
        q = GaussianPosterior(mean=[0.0], logvar=[math.log(4.0)])
        expected = 0.5 * (4.0 - 1.0 - math.log(4.0))
        assert kl_diag_gaussian(q) == pytest.approx(expected, abs=1e-12)
        assert kl_diag_gaussian(q) == pytest.approx(0.806853, abs=1e-6)

    def test_nonnegative_with_equality_only_at_prior(self):
        rng = np.random.default_rng(7)
        for _ in range(500):
            d = int(rng.integers(1, 8))
            q = GaussianPosterior(mean=rng.standard_normal(d),
                                  logvar=rng.uniform(-5, 5, d))
            kl = kl_diag_gaussian(q)
            assert kl >= 0.0
            if np.any(q.mean != 0.0) or np.any(q.logvar != 0.0):
                assert kl > 0.0


class TestMultinomialLoglik:
    def test_empty_target_is_zero(self):
        assert multinomial_loglik(np.array([3.0, -1.0]), np.zeros(2)) == 0.0

    def test_uniform_logits_single_positive(self):
        ll = multinomial_loglik(np.zeros(4), np.array([1.0, 0, 0, 0]))
        assert ll == pytest.approx(math.log(0.25), abs=1e-12)
        assert ll == pytest.approx(-1.386294, abs=1e-6)

    def test_uniform_logits_two_positives(self):
        ll = multinomial_loglik(np.zeros(4), np.array([1.0, 1.0, 0, 0]))
        assert ll == pytest.approx(2 * math.log(0.25), abs=1e-12)
        assert ll == pytest.approx(-2.772589, abs=1e-6)

    def test_softmax_normalization(self):
        # exp(loglik) over all one-hot targets must sum to 1.
        rng = np.random.default_rng(3)
        for _ in range(50):
            logits = rng.standard_normal(6) * 5
            total = sum(
                math.exp(multinomial_loglik(logits, np.eye(6)[i]))
                for i in range(6)
            )
            assert total == pytest.approx(1.0, abs=1e-12)

    def test_large_logits_stable(self):
        ll = multinomial_loglik(np.array([1000.0, 0.0]), np.array([1.0, 0.0]))
        assert np.isfinite(ll)


class TestReparameterize:
    def test_zero_noise_returns_mean(self):
        q = GaussianPosterior(mean=[2.0, -3.0], logvar=[1.0, 2.0])
        assert np.array_equal(reparameterize(q, np.zeros(2)), q.mean)

    def test_unit_variance_passthrough(self):
        q = GaussianPosterior(mean=[0.0, 0.0], logvar=[0.0, 0.0])
        z = reparameterize(q, np.array([1.0, -1.0]))
        assert np.array_equal(z, np.array([1.0, -1.0]))

    def test_hand_case(self):
        q = GaussianPosterior(mean=[1.0], logvar=[math.log(4.0)])
        z = reparameterize(q, np.array([0.5]))
        assert z[0] == pytest.approx(2.0, abs=1e-15)

    def test_affine_in_noise(self):
        rng = np.random.default_rng(11)
        q = GaussianPosterior(mean=rng.standard_normal(5),
                              logvar=rng.uniform(-1, 1, 5))
        e1 = rng.standard_normal(5)
        e2 = rng.standard_normal(5)
        lhs = reparameterize(q, e1 + e2)
        rhs = reparameterize(q, e1) + reparameterize(q, e2) - q.mean
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_mc_mean_approaches_mu(self):
        rng = np.random.default_rng(5)
        q = GaussianPosterior(mean=[0.7], logvar=[math.log(2.0)])
        n = 100_000
        draws = np.array([reparameterize(q, rng.standard_normal(1))[0]
                          for _ in range(n)])
        se = q.std[0] / math.sqrt(n)
        assert abs(draws.mean() - 0.7) < 4 * se


class TestAdamStep:
    def test_zero_grads_leave_params_unchanged(self):
        state = AdamState.init(3)
        params = np.array([1.0, -2.0, 3.0])
        new_params, new_state = adam_step(state, params, np.zeros(3))
        assert np.array_equal(new_params, params)
        assert new_state.step_count == 1

    def test_first_step_bias_corrected(self):
        # With bias correction the first update is lr * g / (|g| + eps).
        state = AdamState.init(1, lr=1e-3)
        new_params, _ = adam_step(state, np.zeros(1), np.array([2.0]))
        assert new_params[0] == pytest.approx(-1e-3, abs=1e-8)

    def test_bitwise_deterministic(self):
        rng = np.random.default_rng(0)
        params = rng.standard_normal(10)
        grads = rng.standard_normal(10)
        a, _ = adam_step(AdamState.init(10), params, grads)
        b, _ = adam_step(AdamState.init(10), params, grads)
        assert a.tobytes() == b.tobytes()

    def test_layout_mismatch(self):
        with pytest.raises(ShapeError):
            adam_step(AdamState.init(3), np.zeros(3), np.zeros(4))


class TestFiniteDiffCheck:
    def test_quadratic_is_exact(self):
        rng = np.random.default_rng(1)
        params = rng.standard_normal(6)
        err = finite_diff_check(lambda t: 0.5 * np.sum(t**2), params, params)
        assert err < 1e-9

    def test_sine_within_truncation_error(self):
        rng = np.random.default_rng(2)
        params = rng.uniform(-1, 1, 5)
        h = 1e-5
        err = finite_diff_check(lambda t: np.sum(np.sin(t)), params,
                                np.cos(params), h=h)
        assert err < 10 * h**2

    def test_wrong_gradient_detected(self):
        rng = np.random.default_rng(3)
        params = rng.standard_normal(4) + 2.0
        err = finite_diff_check(lambda t: 0.5 * np.sum(t**2), params,
                                2.0 * params)
        assert err == pytest.approx(0.5, abs=1e-3)

    def test_non_finite_loss_raises(self):
        with pytest.raises(NumericalError):
            finite_diff_check(lambda t: float("nan"), np.ones(2), np.ones(2))
