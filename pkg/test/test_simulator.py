import os
import tempfile
from unittest import TestCase

import numpy as np
from scipy import stats
from tqdm import trange

from immgrad.csv import read_rows, TRUTH_COLUMNS
from immgrad.errors import ConfigurationError, DataError
from immgrad.models import ModelConfig, ParamVector, transition_model, unit_process_noise
from immgrad.simulator import Dataset, generate_dataset, generate_trajectory, P_STAY_INTERVAL, \
    sample_dataset_params, sample_initial_params, SIGMA_R_INTERVAL, SIGMA_V_INTERVALS, stationary_distribution, \
    substream, Trajectory, transition_probabilities


class EndpointRng:
    """Returns one end of every requested interval, so sampling can be checked at the interval bounds."""

    def __init__(self, upper: bool):
        self.upper: bool = upper

    def uniform(self, low, high):
        return high if self.upper else low


def dwell_times(modes: np.ndarray, mode: int):
    """The lengths of the runs of :obj:`mode` that end before the sequence does."""
    runs = []
    length = 0
    for m in modes:
        if m == mode:
            length += 1
        elif length:
            runs.append(length)
            length = 0
    return runs


class TestSampling(TestCase):
    def test_interval_endpoints(self):
        low = sample_dataset_params(EndpointRng(upper=False), 2)
        self.assertEqual(low.sigma_v, (SIGMA_V_INTERVALS[0][0], SIGMA_V_INTERVALS[1][0]))
        self.assertEqual(low.p_stay, (P_STAY_INTERVAL[0],) * 2)
        self.assertEqual(low.sigma_r, SIGMA_R_INTERVAL[0])
        high = sample_dataset_params(EndpointRng(upper=True), 2)
        self.assertEqual(high.sigma_v, (SIGMA_V_INTERVALS[0][1], SIGMA_V_INTERVALS[1][1]))
        self.assertEqual(high.p_stay, (P_STAY_INTERVAL[1],) * 2)
        self.assertEqual(high.sigma_r, SIGMA_R_INTERVAL[1])

    def test_samples_are_in_range_and_distinct(self):
        seen = set()
        for seed in trange(100):
            theta = sample_dataset_params(substream(seed), 2)
            self.assertTrue(SIGMA_V_INTERVALS[0][0] <= theta.sigma_v[0] <= SIGMA_V_INTERVALS[0][1])
            self.assertTrue(SIGMA_V_INTERVALS[1][0] <= theta.sigma_v[1] <= SIGMA_V_INTERVALS[1][1])
            self.assertTrue(all(P_STAY_INTERVAL[0] <= p <= P_STAY_INTERVAL[1] for p in theta.p_stay))
            self.assertTrue(SIGMA_R_INTERVAL[0] <= theta.sigma_r <= SIGMA_R_INTERVAL[1])
            seen.add(theta)
        self.assertEqual(len(seen), 100)

    def test_mean_measurement_noise(self):
        draws = [sample_dataset_params(substream(seed), 2).sigma_r for seed in range(2000)]
        self.assertAlmostEqual(float(np.mean(draws)), sum(SIGMA_R_INTERVAL) / 2.0, delta=0.5)

    def test_initial_params_are_independent_of_true_params(self):
        self.assertNotEqual(sample_initial_params(3, 2), generate_dataset(3, trajectories=1, length=2).true_params)
        self.assertEqual(sample_initial_params(3, 2), sample_initial_params(3, 2))

    def test_stationary_distribution(self):
        pi = stationary_distribution(transition_probabilities(ParamVector([1.0, 2.0], [0.9, 0.8], 1.0)))
        np.testing.assert_allclose(pi, [2.0 / 3.0, 1.0 / 3.0])
        np.testing.assert_array_equal(stationary_distribution(np.eye(3)), np.full(3, 1.0 / 3.0))


class TestTrajectories(TestCase):
    def test_noiseless(self):
        trajectory = generate_trajectory(ParamVector([0.0, 0.0], [0.9, 0.9], 0.0), 50, substream(0))
        np.testing.assert_array_equal(trajectory.states, np.zeros((50, 4)))
        np.testing.assert_array_equal(trajectory.measurements, np.zeros((50, 2)))
        np.testing.assert_array_equal(trajectory.accelerations(), np.zeros(50))

    def test_measurement_noise(self):
        trajectory = generate_trajectory(ParamVector([0.0], None, 5.0), 20000, substream(1))
        self.assertAlmostEqual(float(np.std(trajectory.measurements)), 5.0, delta=0.1)
        self.assertAlmostEqual(float(np.mean(trajectory.measurements)), 0.0, delta=0.1)

    def test_process_noise_covariance(self):
        config = ModelConfig(tau=0.5, modes=1)
        trajectory = generate_trajectory(ParamVector([2.0], None, 0.0), 40000, substream(2), config)
        F = transition_model(config)
        increments = trajectory.states[1:] - trajectory.states[:-1] @ F.T
        expected = 4.0 * unit_process_noise(config)
        covariance = np.cov(increments, rowvar=False)
        scale = np.max(np.abs(expected))
        np.testing.assert_allclose(covariance, expected, rtol=0.05, atol=0.05 * scale)

    def test_mode_switching(self):
        theta = ParamVector([0.1, 10.0], [0.9, 0.8], 1.0)
        modes = generate_trajectory(theta, 50000, substream(3)).modes
        stays = modes[1:] == modes[:-1]
        self.assertAlmostEqual(float(np.mean(stays[modes[:-1] == 0])), 0.9, delta=0.01)
        self.assertAlmostEqual(float(np.mean(stays[modes[:-1] == 1])), 0.8, delta=0.01)
        self.assertAlmostEqual(float(np.mean(modes == 0)), 2.0 / 3.0, delta=0.02)

    def test_dwell_times_are_geometric(self):
        theta = ParamVector([0.1, 10.0], [0.9, 0.8], 1.0)
        runs = np.array(dwell_times(generate_trajectory(theta, 50000, substream(4)).modes, 0))
        bins = np.arange(1, 16)
        observed = np.array([np.sum(runs == k) for k in bins] + [np.sum(runs > bins[-1])])
        probabilities = np.array([0.9 ** (k - 1) * 0.1 for k in bins] + [0.9 ** bins[-1]])
        _, p_value = stats.chisquare(observed, probabilities * len(runs))
        self.assertGreater(p_value, 1e-3)

    def test_maneuvering_mode_accelerates_more(self):
        theta = ParamVector([0.1, 30.0], [0.95, 0.95], 1.0)
        trajectory = generate_trajectory(theta, 5000, substream(5))
        accelerations = trajectory.accelerations()[1:]
        previous_modes = trajectory.modes[:-1]
        self.assertGreater(np.mean(accelerations[previous_modes == 1]),
                           10.0 * np.mean(accelerations[previous_modes == 0]))

    def test_invalid_trajectories(self):
        with self.assertRaises(ConfigurationError):
            generate_trajectory(ParamVector([1.0], None, 1.0), 1, substream(0))
        with self.assertRaises(DataError):
            Trajectory(np.zeros((3, 4)), np.zeros(2), np.zeros((3, 2)))
        with self.assertRaises(DataError):
            Trajectory.from_dict({'states': [[0.0] * 4]})


class TestDatasets(TestCase):
    def test_determinism(self):
        first = generate_dataset(11, trajectories=4, length=30)
        self.assertEqual(first, generate_dataset(11, trajectories=4, length=30))
        self.assertNotEqual(first, generate_dataset(12, trajectories=4, length=30))
        # each trajectory has its own stream, so the count does not change the others
        fewer = generate_dataset(11, trajectories=2, length=30)
        self.assertEqual(fewer.trajectories, first.trajectories[:2])

    def test_default_split(self):
        dataset = generate_dataset(0, trajectories=5, length=10)
        self.assertEqual(dataset.train_indices, [0, 2, 4])
        self.assertEqual(dataset.test_indices, [1, 3])
        self.assertEqual(dataset.train[1], dataset.trajectories[2])
        with self.assertRaises(DataError):
            Dataset(dataset.trajectories, dataset.true_params, 0, train_indices=[0, 1], test_indices=[1])
        with self.assertRaises(DataError):
            Dataset(dataset.trajectories, dataset.true_params, 0, train_indices=[5], test_indices=[])

    def test_given_true_params(self):
        theta = ParamVector([1.0], None, 2.0)
        dataset = generate_dataset(0, trajectories=2, length=10, modes=1, true_params=theta)
        self.assertEqual(dataset.true_params, theta)
        with self.assertRaises(ConfigurationError):
            generate_dataset(0, trajectories=2, length=10, modes=2, true_params=theta)
        with self.assertRaises(ConfigurationError):
            generate_dataset(0, trajectories=0)

    def test_save_and_load(self):
        dataset = generate_dataset(7, trajectories=3, length=20, tau=0.5)
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'dataset.json')
            dataset.save(path)
            loaded = Dataset.load(path)
            self.assertEqual(loaded, dataset)
            self.assertEqual(loaded.config, ModelConfig(tau=0.5, modes=2))
            with open(path) as f:
                first_text = f.read()
            loaded.save(path)
            with open(path) as f:
                self.assertEqual(f.read(), first_text)

    def test_malformed_documents(self):
        with self.assertRaises(DataError):
            Dataset.from_dict({'trajectories': []})
        with self.assertRaises(DataError) as context:
            Dataset.from_dict({
                'true_params': {'sigma_v': [1.0], 'sigma_r': 1.0},
                'trajectories': [{'states': [[0.0] * 4], 'modes': [0], 'measurements': [[0.0, 0.0]]}, {'states': 3}]
            })
        self.assertEqual(context.exception.trajectory, 1)

    def test_export_csv(self):
        dataset = generate_dataset(8, trajectories=2, length=15)
        with tempfile.TemporaryDirectory() as directory:
            paths = dataset.export_csv(directory)
            self.assertEqual(len(paths), 4)
            measurements = read_rows(os.path.join(directory, 'trajectory_001_measurements.csv'))
            self.assertEqual(len(measurements), 15)
            self.assertEqual(float(measurements[3]['zx']), dataset.trajectories[1].measurements[3, 0])
            truth = read_rows(os.path.join(directory, 'trajectory_000_truth.csv'))
            self.assertEqual(tuple(truth[0].keys()), TRUTH_COLUMNS)
            self.assertEqual([int(row['mode']) for row in truth], dataset.trajectories[0].modes.tolist())
            self.assertEqual(len(dataset.export_csv(directory, truth=False)), 2)
