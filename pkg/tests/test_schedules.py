import math
import unittest

import numpy as np

from schedules import (
    VARIANT_SMOOTH,
    CommClock,
    ScheduleError,
    ScheduleParams,
    alpha,
    alpha_array,
    build_table,
    c2_term_majorant,
    consensus_bound,
    ergodic_error_bound,
    error_constant_a,
    lambda_,
    lambda_array,
    minimax_pair,
    minimax_params,
    rate_exponent,
    rate_shape,
    resolve_smoothness_scale,
    series_diagnostics,
    series_from_arrays,
    smoothness_scale,
    tau,
    validate,
)


def reference_alpha(t: int, p: float, gamma: float, scale: float) -> float:
    mu = 1.0 / (2.0 * p)
    kappa = (p + 1.0) / (2.0 * p)
    return (1.0 + math.log(t)) ** -gamma * t ** -(kappa - mu) * min(t ** -mu, 1.0 / scale)


def reference_lambda(t: int, p: float, scale: float) -> float:
    return max(t ** (1.0 / (2.0 * p)), scale)


def reference_series(horizon: int, p: float, gamma: float, scale: float, period: int) -> dict[str, float]:
    terms: dict[str, list[float]] = {name: [] for name in ("C0", "C1", "C2", "C3", "C4", "C5")}
    alphas = [reference_alpha(t, p, gamma, scale) for t in range(1, horizon + 1)]
    lambdas = [reference_lambda(t, p, scale) for t in range(1, horizon + 1)]
    # Latest communication instant at or before t; stays at 1 through t = 1 + period.
    anchor = 1
    for t in range(1, horizon + 1):
        if t > 1 + period and t - anchor >= period:
            anchor += period * ((t - anchor) // period)
        a, lam = alphas[t - 1], lambdas[t - 1]
        a_tau, lam_tau = alphas[anchor - 1], lambdas[anchor - 1]
        terms["C0"].append(a * a_tau ** 2 * lam_tau ** 2)
        terms["C1"].append(a * a_tau * lam * lam_tau)
        terms["C2"].append(a * lam ** (1.0 - p))
        terms["C3"].append(a ** 2 * lam ** (2.0 - 2.0 * p))
        terms["C4"].append((a * lam) ** 2 * lam ** -p)
        terms["C5"].append((a * lam) ** 4 * lam ** -p)
    return {name: math.fsum(values) for name, values in terms.items()}


class ParameterTests(unittest.TestCase):
    def test_minimax_pair_is_tight_in_both_branches(self):
        for p in (1.2, 1.5, 1.8, 2.0):
            kappa, mu = minimax_pair(p)
            self.assertAlmostEqual(kappa, mu + 0.5, places=12)
            self.assertAlmostEqual(kappa, 1.0 - mu * (p - 1.0), places=12)
            validate(ScheduleParams(p=p, mu=mu, kappa=kappa, gamma=1.01, scale_constant=2.0))

    def test_minimax_pair_value(self):
        kappa, mu = minimax_pair(1.8)
        self.assertAlmostEqual(kappa, 2.8 / 3.6)
        self.assertAlmostEqual(mu, 1.0 / 3.6)

    def test_gamma_must_exceed_one(self):
        with self.assertRaises(ScheduleError) as ctx:
            minimax_params(1.8, gamma=0.9, scale_constant=2.0)
        self.assertEqual(ctx.exception.field, "gamma")

    def test_kappa_inequalities(self):
        with self.assertRaises(ScheduleError) as ctx:
            validate(ScheduleParams(p=1.8, mu=0.3, kappa=0.7, gamma=1.01, scale_constant=2.0))
        self.assertEqual(ctx.exception.field, "kappa")
        with self.assertRaises(ScheduleError) as ctx:
            validate(ScheduleParams(p=1.2, mu=0.1, kappa=0.65, gamma=1.01, scale_constant=2.0))
        self.assertIn("1 - mu(p - 1)", str(ctx.exception))

    def test_unknown_variant(self):
        with self.assertRaises(ScheduleError) as ctx:
            validate(ScheduleParams(p=2.0, mu=0.25, kappa=0.75, gamma=1.01, scale_constant=2.0, variant="adaptive"))
        self.assertEqual(ctx.exception.field, "schedule_variant")


class ScheduleValueTests(unittest.TestCase):
    def setUp(self):
        self.params = minimax_params(1.8, gamma=1.01, scale_constant=2.0)

    def test_first_iteration(self):
        self.assertAlmostEqual(alpha(self.params, 1), 0.5)
        self.assertEqual(lambda_(self.params, 1), 2.0)

    def test_golden_values(self):
        for t in (2, 10, 100, 12345):
            self.assertAlmostEqual(alpha(self.params, t), reference_alpha(t, 1.8, 1.01, 2.0), places=14)
            self.assertAlmostEqual(lambda_(self.params, t), max(t ** (1.0 / 3.6), 2.0), places=12)
        self.assertAlmostEqual(alpha(self.params, 100), 0.00488, delta=1e-5)

    def test_rejects_iteration_zero(self):
        with self.assertRaises(ScheduleError):
            alpha(self.params, 0)

    def test_monotone_and_step_product_bounded(self):
        horizon = 1_000_000
        alphas = alpha_array(self.params, horizon)
        lambdas = lambda_array(self.params, horizon)
        self.assertTrue(np.all(np.diff(alphas) <= 1e-15 * alphas[1:]))
        self.assertTrue(np.all(np.diff(lambdas) >= 0.0))
        self.assertLessEqual(float(np.max(alphas * lambdas)), 1.0 + 1e-12)

    def test_table_is_read_only(self):
        table = build_table(self.params, 10)
        with self.assertRaises(ValueError):
            table.alpha[0] = 1.0
        np.testing.assert_array_equal(table.step_products, table.alpha * table.lambda_)


class ClockTests(unittest.TestCase):
    def test_full_scale_horizon(self):
        clock = CommClock(period=2, rounds=30_000)
        self.assertEqual(clock.horizon, 60_001)
        self.assertEqual(clock.communication_instants.size, 30_000)
        self.assertEqual(int(clock.communication_instants[-1]), 60_001)

    def test_communication_instants(self):
        clock = CommClock(period=2, rounds=3)
        self.assertEqual([t for t in range(1, 9) if clock.is_communication_instant(t)], [3, 5, 7])

    def test_tau(self):
        clock = CommClock(period=2, rounds=3)
        self.assertEqual([tau(clock, t) for t in range(1, 8)], [1, 1, 1, 3, 5, 5, 7])
        with self.assertRaises(ScheduleError):
            tau(clock, 8)

    def test_invalid_clock(self):
        with self.assertRaises(ScheduleError):
            CommClock(period=0, rounds=1)


class ConsensusBoundTests(unittest.TestCase):
    def setUp(self):
        self.params = minimax_params(1.8, gamma=1.01, scale_constant=2.0)
        self.clock = CommClock(period=3, rounds=4)

    def test_zero_at_start_and_sync_instants(self):
        self.assertEqual(consensus_bound(self.params, self.clock, 1), 0.0)
        for t in self.clock.communication_instants:
            self.assertEqual(consensus_bound(self.params, self.clock, int(t)), 0.0)

    def test_partial_sums_between_syncs(self):
        table = build_table(self.params, self.clock.horizon)
        products = table.step_products
        self.assertAlmostEqual(consensus_bound(self.params, self.clock, 2), 2.0 * products[0])
        self.assertAlmostEqual(consensus_bound(self.params, self.clock, 3), 2.0 * (products[0] + products[1]))
        self.assertAlmostEqual(consensus_bound(self.params, self.clock, 6, table), 2.0 * (products[3] + products[4]))


class SeriesTests(unittest.TestCase):
    def setUp(self):
        self.params = minimax_params(1.8, gamma=1.01, scale_constant=2.0)
        self.clock = CommClock(period=2, rounds=1)

    def test_zero_stepsizes_give_zero_sums(self):
        series = series_from_arrays(np.zeros(100), np.full(100, 2.0), 2, 1.8)
        self.assertEqual(set(series.as_dict().values()), {0.0})

    def test_c2_terms_below_majorant(self):
        horizon = 100_000
        terms = alpha_array(self.params, horizon) * np.power(lambda_array(self.params, horizon), -0.8)
        self.assertTrue(np.all(terms <= c2_term_majorant(self.params, horizon) * (1.0 + 1e-12)))

    def test_partial_sums_settle(self):
        short = series_diagnostics(self.params, self.clock, 10_000).as_dict()
        long = series_diagnostics(self.params, self.clock, 100_000).as_dict()
        for name in ("C0", "C1", "C3", "C4", "C5"):
            self.assertGreaterEqual(long[name], short[name])
            self.assertLess((long[name] - short[name]) / long[name], 0.05, name)
        tail = float(np.sum(c2_term_majorant(self.params, 100_000)[10_000:]))
        self.assertLessEqual(long["C2"] - short["C2"], tail)

    def test_partial_sums_match_direct_summation(self):
        computed = series_diagnostics(self.params, self.clock, 100_000).as_dict()
        expected = reference_series(100_000, p=1.8, gamma=1.01, scale=2.0, period=2)
        for name, value in expected.items():
            self.assertTrue(math.isfinite(value) and value > 0, name)
            self.assertAlmostEqual(computed[name], value, delta=1e-10 * value, msg=name)

    def test_partial_sums_are_finite(self):
        series = series_diagnostics(self.params, self.clock, 100_000)
        self.assertTrue(all(math.isfinite(value) and value > 0 for value in series.as_dict().values()))


class ConstantTests(unittest.TestCase):
    def test_constant_a_with_empty_series(self):
        series = series_from_arrays(np.zeros(10), np.ones(10), 2, 1.8)
        self.assertAlmostEqual(error_constant_a(series, 4, 1.0, 2, 1.0, 1.8, delta=0.05), math.log(20.0) + 32.0)

    def test_bounded_gradient_rule_drops_c0(self):
        params = minimax_params(1.8, gamma=1.01, scale_constant=2.0)
        series = series_diagnostics(params, CommClock(period=2, rounds=1), 1_000)
        with_c0 = error_constant_a(series, 2, 3.0, 2, 1.0, 1.8)
        without_c0 = error_constant_a(series, 2, 3.0, 2, 1.0, 1.8, include_c0=False)
        self.assertAlmostEqual(with_c0 - without_c0, 2 * 3.0 * 4 * series.c0)

    def test_rejects_invalid_confidence(self):
        series = series_from_arrays(np.zeros(10), np.ones(10), 2, 1.8)
        with self.assertRaises(ScheduleError):
            error_constant_a(series, 1, 1.0, 1, 1.0, 1.8, delta=1.0)

    def test_smoothness_fixed_point(self):
        kappa, mu = minimax_pair(1.8)
        constants = resolve_smoothness_scale(
            p=1.8, mu=mu, kappa=kappa, gamma=1.01,
            clock=CommClock(period=2, rounds=500),
            agents=3, smoothness=2.0, initial_radius=1.0, initial_gradient=1.5, sigma=1.0,
        )
        self.assertTrue(constants.converged)
        self.assertGreaterEqual(constants.constant_a, 24.0)
        self.assertAlmostEqual(constants.scale_constant, smoothness_scale(3, 2.0, 1.0, 1.5, constants.constant_a))
        validate(ScheduleParams(p=1.8, mu=mu, kappa=kappa, gamma=1.01,
                                scale_constant=constants.scale_constant, variant=VARIANT_SMOOTH))

    def test_rate_helpers(self):
        self.assertAlmostEqual(rate_exponent(1.8), -0.8 / 3.6)
        self.assertAlmostEqual(rate_exponent(2.0), -0.25)
        self.assertAlmostEqual(rate_shape(1e4, 2.0, 1.0), 1e4 ** -0.25 * math.log(1e4))
        self.assertAlmostEqual(ergodic_error_bound(100, 0.01, 2, 1.0, 3.0), 4.0 * 31.0 ** 2 / 1.0)


if __name__ == "__main__":
    unittest.main()
