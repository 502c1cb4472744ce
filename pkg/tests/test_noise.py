import math
import unittest

import numpy as np

from noise import (
    NoiseModelError,
    StochasticOracle,
    certify_sigma,
    clipped_estimator_diagnostic,
    diagnostic_stream,
    gaussian,
    make_stream,
    moment_diagnostic,
    no_noise,
    noisy_gradient,
    pareto_inverse_cdf,
    resolve_sigma,
    sample_noise,
    shifted_pareto,
)
from problems import gradient, quadratic


class NoiseModelTests(unittest.TestCase):
    def test_pareto_inverse_cdf_and_centering(self):
        model = shifted_pareto(beta=2.0, x_scale=0.5)
        self.assertAlmostEqual(float(pareto_inverse_cdf(model, 0.75)), 1.0, places=14)
        self.assertAlmostEqual(float(pareto_inverse_cdf(model, 0.75)) - model.pareto_mean, 0.0, places=14)
        self.assertEqual(float(pareto_inverse_cdf(model, 0.0)), 0.5)
        self.assertEqual(float(pareto_inverse_cdf(model, 0.0)) - model.pareto_mean, -0.5)

    def test_mean_must_exist(self):
        with self.assertRaises(NoiseModelError):
            shifted_pareto(beta=1.0)
        with self.assertRaises(NoiseModelError):
            shifted_pareto(beta=0.5)

    def test_tail_parameter_range(self):
        with self.assertRaises(NoiseModelError):
            gaussian(p_moment=1.0)
        with self.assertRaises(NoiseModelError):
            shifted_pareto(p_moment=2.5)

    def test_none_model_is_zero(self):
        np.testing.assert_array_equal(sample_noise(no_noise(), 3, make_stream(0, 0, 1)), np.zeros(3))

    def test_pareto_samples_are_bounded_below(self):
        model = shifted_pareto()
        samples = sample_noise(model, 2, make_stream(4, 0, 0), size=10_000)
        self.assertGreaterEqual(float(samples.min()), model.x_scale - model.pareto_mean)

    def test_empirical_mean_is_near_zero(self):
        samples = sample_noise(gaussian(std=2.0), 1, diagnostic_stream(5), size=200_000)
        self.assertLess(abs(float(samples.mean())), 0.02)
        heavy = sample_noise(shifted_pareto(), 1, diagnostic_stream(6), size=1_000_000)
        self.assertLess(abs(float(heavy.mean())), 0.05)


class StreamTests(unittest.TestCase):
    def test_same_block_reproduces(self):
        first = make_stream(42, 3, 17).random(5)
        second = make_stream(42, 3, 17).random(5)
        np.testing.assert_array_equal(first, second)

    def test_blocks_are_distinct(self):
        base = make_stream(42, 3, 17).random(4)
        self.assertFalse(np.array_equal(base, make_stream(42, 4, 17).random(4)))
        self.assertFalse(np.array_equal(base, make_stream(42, 3, 18).random(4)))
        self.assertFalse(np.array_equal(base, make_stream(43, 3, 17).random(4)))

    def test_rejects_negative_identifiers(self):
        with self.assertRaises(NoiseModelError):
            make_stream(-1, 0, 0)


class OracleTests(unittest.TestCase):
    def setUp(self):
        self.problem = quadratic([[1.0, 0.0], [0.0, 1.0]])
        self.oracle = StochasticOracle(problem=self.problem, noise=shifted_pareto(), master_seed=9)

    def test_gradient_plus_noise(self):
        x = np.array([0.2, 0.3])
        expected = gradient(self.problem, 1, x) + sample_noise(self.oracle.noise, 2, make_stream(9, 1, 5))
        np.testing.assert_array_equal(noisy_gradient(self.oracle, 1, x, 5), expected)

    def test_call_order_does_not_matter(self):
        x = np.array([0.5, 0.5])
        keys = [(agent, t) for agent in range(2) for t in range(1, 4)]
        forward = {key: noisy_gradient(self.oracle, key[0], x, key[1]) for key in keys}
        backward = {key: noisy_gradient(self.oracle, key[0], x, key[1]) for key in reversed(keys)}
        for key in keys:
            np.testing.assert_array_equal(forward[key], backward[key])

    def test_noiseless_oracle_returns_exact_gradient(self):
        oracle = StochasticOracle(problem=self.problem, noise=no_noise())
        np.testing.assert_array_equal(noisy_gradient(oracle, 0, [0.0, 0.0], 1), [-1.0, 0.0])

    def test_sample_mean_approaches_exact_gradient(self):
        x = np.array([0.2, 0.3])
        exact = gradient(self.problem, 1, x)
        count = 100_000
        for noise, width in ((gaussian(std=1.0), 3.0), (shifted_pareto(), 5.0)):
            oracle = StochasticOracle(problem=self.problem, noise=noise, master_seed=13)
            samples = np.array([noisy_gradient(oracle, 1, x, t) for t in range(1, count + 1)])
            tolerance = width * samples.std(axis=0, ddof=1) / math.sqrt(count)
            self.assertTrue(np.all(np.abs(samples.mean(axis=0) - exact) <= tolerance), noise.kind)


class MomentTests(unittest.TestCase):
    def test_gaussian_sigma_closed_form(self):
        self.assertAlmostEqual(certify_sigma(gaussian(std=1.0, p_moment=2.0), 2.0, 1), 1.0, places=12)
        self.assertAlmostEqual(certify_sigma(gaussian(std=1.0, p_moment=2.0), 2.0, 2), math.sqrt(2.0), places=12)

    def test_gaussian_moment_matches_closed_form(self):
        model = gaussian(std=1.0)
        estimate = moment_diagnostic(model, 2.0, 1_000_000, diagnostic_stream(12), dim=1)
        self.assertAlmostEqual(estimate, 1.0, delta=0.01)

    def test_pareto_moment_matches_quadrature(self):
        # E|X - 1|^1.8 for X = 0.5 s^(-1/2), s ~ U(0, 1); substituting s = w^10 removes the singularity.
        w = np.linspace(0.0, 1.0, 1_000_001)
        exact = float(np.trapezoid(10.0 * np.abs(0.5 - w ** 5) ** 1.8, w))
        model = shifted_pareto(beta=2.0, x_scale=0.5, p_moment=1.8)
        for seed in (31, 32, 33):
            estimate = moment_diagnostic(model, 1.8, 1_000_000, diagnostic_stream(seed), dim=1)
            self.assertTrue(math.isfinite(estimate))
            self.assertAlmostEqual(estimate, exact, delta=0.2 * exact)

    def test_pareto_second_moment_grows_with_sample_size(self):
        model = shifted_pareto(beta=2.0, x_scale=0.5, p_moment=2.0)
        seeds = range(40, 47)
        small = np.median([moment_diagnostic(model, 2.0, 1_000, diagnostic_stream(seed), dim=1) for seed in seeds])
        large = np.median([moment_diagnostic(model, 2.0, 1_000_000, diagnostic_stream(seed), dim=1) for seed in seeds])
        # The truncated second moment grows like ln(N) / 4.
        self.assertGreater(large - small, 0.8)

    def test_explicit_sigma_wins(self):
        self.assertEqual(resolve_sigma(shifted_pareto(sigma=3.0), 2), 3.0)
        self.assertEqual(resolve_sigma(no_noise(), 2), 0.0)

    def test_too_few_samples(self):
        with self.assertRaises(NoiseModelError):
            moment_diagnostic(gaussian(), 1.5, 10, diagnostic_stream(1))


class ClippedEstimatorDiagnosticTests(unittest.TestCase):
    def setUp(self):
        self.problem = quadratic([[0.0, 0.0]])

    def test_precondition_on_gradient_norm(self):
        oracle = StochasticOracle(problem=self.problem, noise=shifted_pareto())
        with self.assertRaises(NoiseModelError):
            clipped_estimator_diagnostic(oracle, [3.0, 0.0], 4.0, 1.8, 1.0, 10_000, diagnostic_stream(2))

    def test_noiseless_estimator_has_no_bias(self):
        oracle = StochasticOracle(problem=self.problem, noise=no_noise())
        report = clipped_estimator_diagnostic(oracle, [0.5, 0.0], 4.0, 1.8, 1.0, 10_000, diagnostic_stream(2))
        self.assertEqual((report.bias_norm, report.second_moment), (0.0, 0.0))
        self.assertTrue(report.holds())

    def test_pareto_bias_and_variance_bounds(self):
        noise = shifted_pareto(beta=2.0, x_scale=0.5, p_moment=1.8)
        oracle = StochasticOracle(problem=self.problem, noise=noise, master_seed=1)
        sigma = certify_sigma(noise, 1.8, 2)
        report = clipped_estimator_diagnostic(oracle, [0.5, 0.0], 4.0, 1.8, sigma, 1_000_000, diagnostic_stream(3))
        self.assertAlmostEqual(report.bias_bound, 4.0 * sigma ** 1.8 * 4.0 ** -0.8)
        self.assertAlmostEqual(report.second_moment_bound, 40.0 * sigma ** 1.8 * 4.0 ** 0.2)
        self.assertTrue(report.holds(slack=1.2))


if __name__ == "__main__":
    unittest.main()
