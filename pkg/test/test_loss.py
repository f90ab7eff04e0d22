from unittest import TestCase

import numpy as np
from tqdm import trange

from immgrad.errors import DataError, FilterDivergenceError
from immgrad.loss import dataset_nll, loss_and_gradient, trajectory_nll
from immgrad.models import ModelConfig, ParamVector, to_constrained, to_unconstrained, UnconstrainedParams
from immgrad.simulator import generate_dataset, generate_trajectory, sample_dataset_params, substream

from .oracles import FINITE_DIFFERENCE_TOLERANCE, finite_difference_gradient, naive_imm_reference, total_nll


TRUE_PARAMS = ParamVector([0.5, 20.0], [0.95, 0.9], 5.0)


def simulate(count: int, length: int, seed: int = 0, theta: ParamVector = TRUE_PARAMS):
    return [generate_trajectory(theta, length, substream(seed, i)) for i in range(count)]


class TestLoss(TestCase):
    @classmethod
    def setUpClass(cls):
        cls.config = ModelConfig(modes=2)
        cls.trajectories = simulate(3, 25)

    def test_matches_naive_recursion(self):
        for trajectory in self.trajectories:
            expected = total_nll(naive_imm_reference(trajectory.measurements, TRUE_PARAMS.sigma_v,
                                                     TRUE_PARAMS.p_stay, TRUE_PARAMS.sigma_r))
            actual = float(trajectory_nll(trajectory.measurements, TRUE_PARAMS, self.config))
            self.assertAlmostEqual(actual, expected, delta=1e-8 * abs(expected))

    def test_gradient_matches_finite_differences(self):
        trajectories = simulate(2, 20, seed=1)

        def loss(vector):
            theta = to_constrained(UnconstrainedParams.from_vector(vector, 2))
            return dataset_nll(trajectories, theta, self.config).value

        for k in trange(20):
            theta = sample_dataset_params(substream(100 + k), 2)
            u = to_unconstrained(theta).as_vector()
            value, gradient = loss_and_gradient(to_unconstrained(theta), trajectories, self.config)
            self.assertAlmostEqual(value, loss(u), delta=1e-9 * abs(value))
            expected = finite_difference_gradient(loss, u, step=1e-5)
            scale = np.maximum(np.abs(expected), 1.0)
            self.assertTrue(FINITE_DIFFERENCE_TOLERANCE.close(gradient / scale, expected / scale),
                            f"{gradient!r} != {expected!r}")

    def test_frozen_gradient_is_zero(self):
        u = to_unconstrained(TRUE_PARAMS)
        _, gradient = loss_and_gradient(u, self.trajectories, self.config, [True, True, True, True, False])
        self.assertEqual(gradient[-1], 0.0)
        self.assertNotEqual(gradient[0], 0.0)
        _, gradient = loss_and_gradient(u, self.trajectories, self.config, [False, False, False, False, True])
        np.testing.assert_array_equal(gradient[:4], np.zeros(4))

    def test_dataset_loss_is_the_sum_of_trajectory_losses(self):
        mixed = self.trajectories + simulate(2, 12, seed=2)
        loss = dataset_nll(mixed, TRUE_PARAMS, self.config)
        singles = [float(trajectory_nll(t.measurements, TRUE_PARAMS, self.config)) for t in mixed]
        self.assertAlmostEqual(loss.value, sum(singles), delta=1e-9 * abs(loss.value))
        for per_trajectory, single in zip(loss.per_trajectory, singles):
            self.assertAlmostEqual(float(per_trajectory), single, delta=1e-9 * abs(single))
        self.assertEqual(loss.steps_counted, 3 * 23 + 2 * 10)

    def test_order_of_trajectories(self):
        forward = dataset_nll(self.trajectories, TRUE_PARAMS, self.config).value
        backward = dataset_nll(self.trajectories[::-1], TRUE_PARAMS, self.config).value
        self.assertAlmostEqual(forward, backward, delta=1e-10 * abs(forward))

    def test_short_and_empty_splits(self):
        with self.assertRaises(DataError):
            trajectory_nll(np.zeros((2, 2)), TRUE_PARAMS, self.config)
        with self.assertRaises(DataError):
            dataset_nll([], TRUE_PARAMS, self.config)
        with self.assertRaises(DataError) as context:
            dataset_nll([self.trajectories[0], np.zeros((2, 2))], TRUE_PARAMS, self.config, ids=[4, 9])
        self.assertEqual(context.exception.trajectory, 9)

    def test_failures_name_the_trajectory(self):
        degenerate = ParamVector([0.0], None, 0.0)
        with self.assertRaises(FilterDivergenceError) as context:
            dataset_nll([np.zeros((5, 2)), np.zeros((5, 2))], degenerate, ModelConfig(modes=1), ids=[7, 8])
        self.assertEqual(context.exception.trajectory, 7)
        self.assertEqual(context.exception.step, 2)


def perturbed(theta: ParamVector, coordinate: int, delta: float) -> ParamVector:
    u = to_unconstrained(theta).as_vector()
    u[coordinate] += delta
    return to_constrained(UnconstrainedParams.from_vector(u, theta.m))


class TestLossNearTruth(TestCase):
    """Where the loss of simulated data is lowest relative to the parameters it was simulated with.

    The moment-matched mixture is only an approximation of the true predictive distribution, so on two-mode data the
    loss is not minimal at the truth in every coordinate: the process noise of the first mode and both stay
    probabilities are biased. The measurement noise and the process noise of the maneuvering mode are not.

    """

    @classmethod
    def setUpClass(cls):
        cls.two_mode = [generate_dataset(seed, trajectories=60) for seed in (3, 5)]
        cls.single_mode = generate_dataset(3, trajectories=60, modes=1)

    def assertLowestAtTruth(self, dataset, coordinate: int, delta: float):
        at_truth = dataset_nll(dataset.trajectories, dataset.true_params, dataset.config).value
        for step in (-delta, delta):
            moved = dataset_nll(dataset.trajectories, perturbed(dataset.true_params, coordinate, step),
                                dataset.config).value
            name = dataset.true_params.coordinate_names()[coordinate]
            self.assertLess(at_truth, moved, f"moving {name} by {step:+} lowers the loss of dataset {dataset.seed}")

    def test_two_mode_unbiased_coordinates(self):
        for dataset in self.two_mode:
            names = dataset.true_params.coordinate_names()
            for name in ('sigma_v1', 'sigma_r'):
                self.assertLowestAtTruth(dataset, names.index(name), 0.5)

    def test_single_mode_is_lowest_at_truth(self):
        for coordinate in range(len(self.single_mode.true_params.coordinate_names())):
            self.assertLowestAtTruth(self.single_mode, coordinate, 0.5)

    def test_long_single_mode_trajectory_prefers_the_true_measurement_noise(self):
        config = ModelConfig(modes=1)
        for k in trange(5):
            theta = ParamVector([1.0 + k], None, 5.0 * (k + 1))
            measurements = generate_trajectory(theta, 1000, substream(200 + k)).measurements
            at_truth = float(trajectory_nll(measurements, theta, config))
            for scale in (0.5, 2.0):
                wrong = theta.replace('sigma_r', theta.sigma_r * scale)
                self.assertLess(at_truth, float(trajectory_nll(measurements, wrong, config)))
