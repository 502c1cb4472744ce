import unittest
from unittest.mock import patch

import numpy as np

from domains import box, contains, full_space, probability_simplex
from federation import (
    ASSERT_RECORD,
    RECORD_FULL,
    ConsensusViolation,
    FederatedSimulator,
    FederationConfig,
    FederationConfigError,
    ergodic_average,
    run,
    sync_round,
    time_average,
    validate_config,
)
from geometry import GeometryError, euclidean, negative_entropy
from noise import gaussian, no_noise, shifted_pareto
from problems import generate_regression, global_error, objective, quadratic
from schedules import CommClock, ScheduleTable, minimax_params


def make_config(**overrides):
    params = dict(
        clock=CommClock(period=2, rounds=40),
        schedule=minimax_params(1.8, gamma=1.01, scale_constant=4.0),
        geometry=negative_entropy(2),
        domain=probability_simplex(2),
        problem=generate_regression(4, 2, seed=3),
        noise=shifted_pareto(),
        master_seed=7,
    )
    params.update(overrides)
    return FederationConfig(**params)


def fixed_table(alpha_value, lambda_value, horizon=4):
    alphas = np.full(horizon, alpha_value)
    lambdas = np.full(horizon, lambda_value)
    return ScheduleTable(alpha=alphas, lambda_=lambdas, step_products=alphas * lambdas)


class LocalStepTests(unittest.TestCase):
    def setUp(self):
        self.config = make_config(
            clock=CommClock(period=1, rounds=3),
            geometry=euclidean(2),
            domain=full_space(2),
            problem=quadratic([[0.0, 0.0]]),
            noise=no_noise(),
        )
        self.simulator = FederatedSimulator(self.config)

    def test_plain_gradient_step(self):
        self.simulator.table = fixed_table(0.5, 1e6)
        step, report = self.simulator.local_step(0, 1, np.array([1.0, 0.0]))
        np.testing.assert_array_equal(step, [0.5, 0.0])
        self.assertFalse(report.was_clipped)

    def test_clipped_gradient_step(self):
        self.simulator.table = fixed_table(0.5, 1.0)
        step, report = self.simulator.local_step(0, 1, np.array([10.0, 0.0]))
        np.testing.assert_allclose(step, [9.5, 0.0])
        self.assertTrue(report.was_clipped)

    def test_stationary_point_is_fixed(self):
        step, _ = self.simulator.local_step(0, 2, np.array([0.0, 0.0]))
        np.testing.assert_array_equal(step, [0.0, 0.0])


class SyncRoundTests(unittest.TestCase):
    def test_single_client_is_identity(self):
        np.testing.assert_array_equal(sync_round(np.array([[0.3, 0.7]])), [0.3, 0.7])

    def test_average_of_vertices(self):
        np.testing.assert_allclose(sync_round(np.array([[1.0, 0.0], [0.0, 1.0]])), [0.5, 0.5])

    def test_consensus_is_unchanged(self):
        states = np.tile([0.2, 0.8], (3, 1))
        np.testing.assert_allclose(sync_round(states), [0.2, 0.8], rtol=1e-15)


class ConfigValidationTests(unittest.TestCase):
    def test_initial_points_must_be_feasible(self):
        config = make_config(initial_points=np.tile([0.6, 0.6], (4, 1)))
        with self.assertRaises(FederationConfigError):
            validate_config(config)

    def test_audited_runs_start_in_consensus(self):
        points = np.array([[0.5, 0.5], [0.2, 0.8], [0.5, 0.5], [0.5, 0.5]])
        with self.assertRaises(FederationConfigError):
            validate_config(make_config(initial_points=points))
        np.testing.assert_array_equal(validate_config(make_config(initial_points=points, assertion_mode="off")), points)

    def test_random_initializer_is_shared_and_seeded(self):
        first = validate_config(make_config(initializer="random"))
        second = validate_config(make_config(initializer="random"))
        np.testing.assert_array_equal(first, second)
        self.assertTrue(np.all(first == first[0]))

    def test_entropy_requires_simplex(self):
        config = make_config(domain=box([0.0, 0.0], [1.0, 1.0]), problem=quadratic([[0.5, 0.5]]))
        with self.assertRaises(GeometryError):
            validate_config(config)

    def test_unknown_modes(self):
        with self.assertRaises(FederationConfigError):
            validate_config(make_config(assertion_mode="loud"))
        with self.assertRaises(FederationConfigError):
            validate_config(make_config(initializer="corners"))

    def test_default_initial_points(self):
        np.testing.assert_array_equal(validate_config(make_config()), np.full((4, 2), 0.5))


class RunTests(unittest.TestCase):
    def test_horizon_and_sync_rounds(self):
        result = run(make_config(clock=CommClock(period=2, rounds=50)))
        self.assertEqual(result.horizon, 101)
        self.assertEqual(result.sync_rounds, 50)
        self.assertEqual(result.sync_iterations[0], 3)
        self.assertEqual(result.sync_iterations[-1], 101)
        self.assertEqual(result.t.size, 101)

    def test_consensus_and_feasibility_on_full_record(self):
        config = make_config(record_states=RECORD_FULL, assertion_mode=ASSERT_RECORD, initializer="random")
        result = run(config)
        self.assertEqual(result.consensus_violations, 0)
        self.assertEqual(result.displacement_violations, 0)
        self.assertTrue(np.all(result.consensus_max <= result.consensus_bound + 1e-9))
        for t, states in enumerate(result.trajectories, start=1):
            for state in states:
                self.assertTrue(contains(config.domain, state, 1e-9))
            if config.clock.is_communication_instant(t):
                self.assertTrue(np.all(states == states[0]))
                self.assertEqual(result.consensus_max[t - 1], 0.0)

    def test_strict_mode_aborts_with_offending_iteration(self):
        with patch("federation.consensus_bound", return_value=-1.0):
            with self.assertRaises(ConsensusViolation) as ctx:
                run(make_config())
        self.assertEqual(ctx.exception.iteration, 1)
        self.assertEqual(ctx.exception.bound, -1.0)

    def test_record_mode_counts_violations(self):
        with patch("federation.consensus_bound", return_value=-1.0):
            result = run(make_config(assertion_mode=ASSERT_RECORD, clock=CommClock(period=2, rounds=3)))
        self.assertEqual(result.consensus_violations, 7)

    def test_same_seed_same_run_for_any_worker_count(self):
        config = make_config(problem=generate_regression(6, 2, seed=1), record_states=RECORD_FULL, checkpoint_stride=10)
        single = run(config)
        threaded = run(make_config(
            problem=config.problem, record_states=RECORD_FULL, checkpoint_stride=10, max_workers=4,
        ))
        np.testing.assert_array_equal(single.trajectories, threaded.trajectories)
        np.testing.assert_array_equal(single.f_gap, threaded.f_gap)
        np.testing.assert_array_equal(single.clip_fraction, threaded.clip_fraction)
        np.testing.assert_array_equal(single.ergodic_averages, threaded.ergodic_averages)
        self.assertEqual(single.checkpoints, threaded.checkpoints)

    def test_different_seeds_differ(self):
        first = run(make_config())
        second = run(make_config(master_seed=8))
        self.assertFalse(np.array_equal(first.f_gap, second.f_gap))

    def test_noiseless_gradient_descent_converges(self):
        config = make_config(
            clock=CommClock(period=1, rounds=1000),
            schedule=minimax_params(2.0, gamma=1.01, scale_constant=1.25),
            geometry=euclidean(2),
            domain=full_space(2),
            problem=quadratic([[1.0, -2.0]]),
            noise=no_noise(),
        )
        result = run(config)
        self.assertTrue(np.all(np.diff(result.f_gap) <= 0.0))
        self.assertLess(result.f_gap[-1], 1e-3 * result.f_gap[0])

    def test_matches_minimal_gradient_descent(self):
        problem = quadratic([[1.0, -2.0]])
        config = make_config(
            clock=CommClock(period=1, rounds=1000),
            schedule=minimax_params(1.8, gamma=1.01, scale_constant=5.0),
            geometry=euclidean(2),
            domain=full_space(2),
            problem=problem,
            noise=no_noise(),
            record_states=RECORD_FULL,
        )
        result = run(config)

        x = np.zeros(2)
        expected = [x]
        for t in range(1, result.horizon):
            grad = problem.scale * (x - problem.centers[0])
            x = x - result.alpha[t - 1] * grad
            expected.append(x)
        np.testing.assert_array_equal(result.trajectories[:, 0, :], np.array(expected))
        self.assertEqual(float(result.clip_fraction.max()), 0.0)

    def test_gaussian_noise_on_box(self):
        config = make_config(
            geometry=euclidean(3),
            domain=box([-1.0] * 3, [1.0] * 3),
            problem=quadratic(np.random.default_rng(2).uniform(-1.0, 1.0, size=(3, 3))),
            noise=gaussian(std=2.0),
            assertion_mode=ASSERT_RECORD,
        )
        result = run(config)
        self.assertEqual(result.consensus_violations + result.displacement_violations, 0)
        self.assertGreater(float(result.clip_fraction.mean()), 0.0)


class ErgodicAverageTests(unittest.TestCase):
    def test_constant_trajectory(self):
        trajectory = np.tile([0.7, 0.3], (5, 1))
        np.testing.assert_allclose(time_average(trajectory), [0.7, 0.3])

    def test_two_point_trajectory(self):
        np.testing.assert_allclose(time_average(np.array([[1.0, 0.0], [0.0, 1.0]])), [0.5, 0.5])

    def test_recorded_average_matches_full_trajectory(self):
        result = run(make_config(record_states=RECORD_FULL))
        for client in range(result.agents):
            np.testing.assert_allclose(
                result.ergodic_averages[client], result.trajectories[:, client, :].mean(axis=0), rtol=1e-12
            )
            self.assertTrue(contains(probability_simplex(2), ergodic_average(result, client)))
        with self.assertRaises(FederationConfigError):
            ergodic_average(result, result.agents)

    def test_global_error_reads_a_finished_run(self):
        result = run(make_config())
        config = make_config()
        expected = np.mean([objective(config.problem, point) for point in result.ergodic_averages]) - result.f_star
        self.assertAlmostEqual(global_error(result, config.problem, result.f_star), float(expected), places=12)

    def test_ergodic_gap_dominates_last_iterate_without_noise(self):
        problem = quadratic([[1.0, -2.0]])
        config = make_config(
            clock=CommClock(period=1, rounds=500),
            schedule=minimax_params(1.8, gamma=1.01, scale_constant=5.0),
            geometry=euclidean(2),
            domain=full_space(2),
            problem=problem,
            noise=no_noise(),
        )
        result = run(config)
        ergodic_gap = objective(problem, ergodic_average(result, 0)) - result.f_star
        self.assertGreaterEqual(ergodic_gap, result.f_gap[-1])


if __name__ == "__main__":
    unittest.main()
