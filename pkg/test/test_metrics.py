from unittest import TestCase

import numpy as np

from immgrad.errors import DataError, UndefinedBaselineError
from immgrad.metrics import evaluate, EvalResult, position_rmse, relative_change, STATE_METRICS
from immgrad.models import ParamVector
from immgrad.simulator import generate_dataset, generate_trajectory, substream, Trajectory


class TestEvaluate(TestCase):
    @classmethod
    def setUpClass(cls):
        cls.true_params = ParamVector([0.2, 25.0], [0.95, 0.9], 10.0)
        cls.dataset = generate_dataset(21, trajectories=6, length=60, true_params=cls.true_params)

    def test_perfect_tracking(self):
        still = Trajectory(np.zeros((20, 4)), np.zeros(20, dtype=int), np.zeros((20, 2)))
        result = evaluate(ParamVector([1.0], None, 1.0), [still, still])
        self.assertEqual(result.state_pred_rmse, 0.0)
        self.assertEqual(result.state_post_rmse, 0.0)
        self.assertIsNone(result.mode_pred_mae)
        self.assertEqual(result.n_steps, 2 * 18)
        self.assertEqual(set(result.metrics()), set(STATE_METRICS))

    def test_indistinguishable_modes(self):
        result = evaluate(ParamVector([5.0, 5.0], [0.9, 0.9], 10.0), self.dataset.trajectories)
        self.assertAlmostEqual(result.mode_pred_mae, 0.5, places=12)
        self.assertAlmostEqual(result.mode_post_mae, 0.5, places=12)

    def test_filtering_beats_raw_measurements(self):
        trajectories = self.dataset.trajectories
        raw = position_rmse(np.concatenate([t.measurements[2:] for t in trajectories]),
                            np.concatenate([t.positions[2:] for t in trajectories]))
        result = evaluate(self.true_params, trajectories)
        self.assertLess(result.state_post_rmse, raw)
        self.assertLess(result.state_post_rmse, result.state_pred_rmse)
        self.assertLess(result.mode_post_mae, 0.5)

    def test_measurement_noise_level(self):
        trajectory = generate_trajectory(ParamVector([1.0], None, 5.0), 20000, substream(0))
        self.assertAlmostEqual(position_rmse(trajectory.measurements, trajectory.positions), 5.0, delta=0.1)
        with self.assertRaises(DataError):
            position_rmse(np.zeros((0, 2)), np.zeros((0, 2)))

    def test_order_of_trajectories(self):
        forward = evaluate(self.true_params, self.dataset.trajectories)
        backward = evaluate(self.true_params, self.dataset.trajectories[::-1])
        for name, value in forward.metrics().items():
            self.assertAlmostEqual(value, backward.metrics()[name], places=12)

    def test_mode_labels_are_symmetric(self):
        swapped_params = ParamVector(self.true_params.sigma_v[::-1], self.true_params.p_stay[::-1],
                                     self.true_params.sigma_r)
        swapped = [Trajectory(t.states, 1 - t.modes, t.measurements) for t in self.dataset.trajectories]
        original = evaluate(self.true_params, self.dataset.trajectories)
        relabeled = evaluate(swapped_params, swapped)
        for name, value in original.metrics().items():
            self.assertAlmostEqual(value, relabeled.metrics()[name], places=9)

    def test_unusable_splits(self):
        with self.assertRaises(DataError):
            evaluate(self.true_params, [])
        short = Trajectory(np.zeros((2, 4)), np.zeros(2, dtype=int), np.zeros((2, 2)))
        with self.assertRaises(DataError) as context:
            evaluate(self.true_params, [self.dataset.trajectories[0], short], ids=[10, 11])
        self.assertEqual(context.exception.trajectory, 11)

    def test_result_documents(self):
        result = evaluate(self.true_params, self.dataset.test)
        self.assertEqual(EvalResult.from_dict(result.to_dict()), result)
        row = result.row('trained')
        self.assertEqual(row[0], 'trained')
        self.assertEqual(row[-1], result.n_steps)
        self.assertEqual(len(row), 6)


class TestRelativeChange(TestCase):
    def test_examples(self):
        trained = EvalResult(8.4, 5.0, 0.1, 0.05)
        baseline = EvalResult(10.0, 4.0, 0.2, 0.05)
        changes = relative_change(trained, baseline)
        self.assertAlmostEqual(changes['state_pred_rmse'], -16.0)
        self.assertAlmostEqual(changes['state_post_rmse'], 25.0)
        self.assertAlmostEqual(changes['mode_pred_mae'], -50.0)
        self.assertEqual(changes['mode_post_mae'], 0.0)

    def test_zero_baseline(self):
        with self.assertRaises(UndefinedBaselineError) as context:
            relative_change(EvalResult(1.0, 1.0), EvalResult(1.0, 0.0))
        self.assertEqual(context.exception.metric, 'state_post_rmse')

    def test_mismatched_metrics(self):
        imm = EvalResult(1.0, 1.0, 0.1, 0.1)
        kf = EvalResult(2.0, 2.0)
        with self.assertRaises(DataError):
            relative_change(imm, kf)
        self.assertEqual(relative_change(imm, kf, STATE_METRICS), {'state_pred_rmse': -50.0, 'state_post_rmse': -50.0})
        with self.assertRaises(DataError):
            relative_change(imm, kf, ['mode_pred_mae'])
