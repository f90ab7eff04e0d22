import os
import tempfile
from unittest import TestCase

from immgrad.csv import ABLATION_COLUMNS, IMM_VS_KF_COLUMNS, read_rows
from immgrad.errors import ConfigurationError
from immgrad.experiments import AblationSpec, apply_freeze_rule, dataset_seed, default_sweep_grid, ExperimentPlan, \
    IMM_VS_KF_SETTINGS, linear_grid, loss_sweep, run_ablation, run_ablation_grid, run_imm_vs_kf, \
    TABLE_I_CONFIGURATIONS, write_plot_script, write_rows_csv
from immgrad.metrics import METRICS, STATE_METRICS
from immgrad.models import ParamVector
from immgrad.optimizer import FreezeMask, TrainConfig
from immgrad.simulator import generate_dataset


def small_spec(**changes) -> AblationSpec:
    options = dict(n_datasets=2, trajectories=4, length=25, train_config=TrainConfig(epochs=3), base_seed=5)
    options.update(changes)
    return AblationSpec(**options)


class TestAblation(TestCase):
    @classmethod
    def setUpClass(cls):
        cls.row = run_ablation(small_spec())

    def test_row(self):
        self.assertEqual(self.row.label, '2 Yes Yes')
        self.assertEqual(self.row.datasets, 2)
        self.assertFalse(self.row.partial)
        self.assertEqual(self.row.metrics, METRICS)
        self.assertEqual(set(self.row.mean), {'vs_untrained', 'vs_true'})
        for outcome in self.row.outcomes:
            self.assertEqual(set(outcome.params), {'trained', 'initial', 'true'})
            self.assertEqual(outcome.seed, dataset_seed(5, outcome.index))

    def test_deterministic(self):
        again = run_ablation(small_spec())
        self.assertEqual(again.mean, self.row.mean)
        self.assertEqual(again.median, self.row.median)

    def test_independent_of_jobs(self):
        parallel = run_ablation(small_spec(), jobs=2)
        for serial_outcome, parallel_outcome in zip(self.row.outcomes, parallel.outcomes):
            self.assertEqual(serial_outcome.changes, parallel_outcome.changes)
            self.assertEqual(serial_outcome.params, parallel_outcome.params)

    def test_dataset_k_does_not_depend_on_the_dataset_count(self):
        more = run_ablation(small_spec(n_datasets=3))
        self.assertEqual(more.outcomes[1].changes, self.row.outcomes[1].changes)

    def test_frozen_parameters_start_at_their_true_values(self):
        row = run_ablation(small_spec(n_datasets=1, train_motion=False))
        outcome = row.outcomes[0]
        for name in ('initial', 'trained'):
            self.assertEqual(outcome.params[name].sigma_v, outcome.params['true'].sigma_v)
            self.assertEqual(outcome.params[name].p_stay, outcome.params['true'].p_stay)
        self.assertNotEqual(outcome.params['trained'].sigma_r, outcome.params['initial'].sigma_r)

    def test_single_mode_rows_have_no_mode_metrics(self):
        row = run_ablation(small_spec(n_datasets=1, modes=1))
        self.assertEqual(row.label, '1 Yes Yes')
        self.assertEqual(row.metrics, STATE_METRICS)
        self.assertEqual(len(row.csv_rows()), 2)

    def test_failed_datasets_make_a_partial_row(self):
        with self.assertLogs('immgrad', level='WARNING'):
            row = run_ablation(small_spec(length=2))
        self.assertTrue(row.partial)
        self.assertEqual(row.datasets, 0)
        self.assertEqual(row.failed, [0, 1])
        self.assertIn('DataError', row.outcomes[0].error)
        self.assertEqual(row.csv_rows(), [])

    def test_grid(self):
        rows = run_ablation_grid(small_spec(n_datasets=1), configurations=TABLE_I_CONFIGURATIONS[4:])
        self.assertEqual([row.label for row in rows], ['1 Yes No', '1 No Yes'])

    def test_csv(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'ablation.csv')
            write_rows_csv(path, [self.row])
            rows = read_rows(path)
        self.assertEqual(len(rows), len(METRICS))
        self.assertEqual(tuple(rows[0].keys()), ABLATION_COLUMNS)
        self.assertEqual(rows[0]['config'], '2 Yes Yes')
        self.assertAlmostEqual(float(rows[0]['vs_true_pct']), self.row.mean['vs_true'][rows[0]['metric']])


class TestImmVsKf(TestCase):
    def test_comparison(self):
        rows = run_imm_vs_kf(small_spec(n_datasets=1), settings=IMM_VS_KF_SETTINGS[1:2])
        self.assertEqual(len(rows), 1)
        row = rows[0]
        self.assertEqual(row.label, 'motion')
        self.assertEqual(row.metrics, STATE_METRICS)
        outcome = row.outcomes[0]
        self.assertEqual(outcome.params['kf'].m, 1)
        self.assertEqual(outcome.params['imm'].m, 2)
        # σ_r is frozen in this setting, so both filters keep the true value
        self.assertEqual(outcome.params['kf'].sigma_r, outcome.params['imm'].sigma_r)
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'imm_vs_kf.csv')
            write_rows_csv(path, rows)
            self.assertEqual(tuple(read_rows(path)[0].keys()), IMM_VS_KF_COLUMNS)

    def test_needs_two_modes(self):
        with self.assertRaises(ConfigurationError):
            run_imm_vs_kf(small_spec(modes=1))


class TestSpecs(TestCase):
    def test_validation(self):
        with self.assertRaises(ConfigurationError):
            AblationSpec(train_motion=False, train_meas=False)
        with self.assertRaises(ConfigurationError):
            AblationSpec(trajectories=1)
        with self.assertRaises(ConfigurationError):
            AblationSpec(n_datasets=0)
        with self.assertRaises(ConfigurationError):
            AblationSpec(tau=-1.0)

    def test_document_round_trip(self):
        spec = small_spec(train_meas=False, tau=0.5)
        self.assertEqual(AblationSpec.from_dict(spec.to_dict()), spec)
        with self.assertRaises(ConfigurationError) as context:
            AblationSpec.from_dict({'n_dataset': 3})
        self.assertEqual(context.exception.key, 'n_dataset')

    def test_freeze_rule(self):
        sampled = ParamVector([0.5, 30.0], [0.96, 0.97], 20.0)
        true = ParamVector([0.1, 10.0], [0.99, 0.95], 3.0)
        initial = apply_freeze_rule(sampled, true, FreezeMask.from_flags(train_motion=True, train_meas=False))
        self.assertEqual(initial, ParamVector([0.5, 30.0], [0.96, 0.97], 3.0))

    def test_plans(self):
        plan = ExperimentPlan.from_document({'grid': True, 'n_datasets': 4})
        self.assertEqual(plan.experiment, ExperimentPlan.ABLATION)
        self.assertEqual([spec.label for spec in plan.specs],
                         ['2 Yes Yes', '2 Yes No', '2 No Yes', '1 Yes Yes', '1 Yes No', '1 No Yes'])
        self.assertTrue(all(spec.n_datasets == 4 for spec in plan.specs))

        plan = ExperimentPlan.from_document({'configs': [{'modes': 1}, {'train_meas': False}], 'base_seed': 3},
                                            overrides={'base_seed': 9})
        self.assertEqual([spec.label for spec in plan.specs], ['1 Yes Yes', '2 Yes No'])
        self.assertEqual(plan.specs[0].base_seed, 9)

        plan = ExperimentPlan.from_document({'experiment': 'imm_vs_kf', 'settings': ['meas']})
        self.assertEqual(plan.settings, [('meas', False, True)])
        self.assertIsNone(ExperimentPlan.from_document({'experiment': 'imm_vs_kf', 'settings': 'all'}).settings)

    def test_invalid_plans(self):
        for doc in (
                [],
                {'experiment': 'bogus'},
                {'grid': True, 'configs': [{}]},
                {'configs': []},
                {'settings': ['meas']},
                {'experiment': 'imm_vs_kf', 'settings': ['velocity']},
                {'epochs': 3}
        ):
            with self.assertRaises(ConfigurationError):
                ExperimentPlan.from_document(doc)


class TestSweep(TestCase):
    @classmethod
    def setUpClass(cls):
        cls.dataset = generate_dataset(3, trajectories=6, length=60,
                                       true_params=ParamVector([0.3, 20.0], [0.95, 0.9], 8.0))

    def test_projection(self):
        curve = loss_sweep(self.dataset, 'sigma_r', [2.0, 8.0, 32.0])
        self.assertEqual([point.value for point in curve], [2.0, 8.0, 32.0])
        self.assertLess(curve[1].nll, curve[0].nll)
        self.assertLess(curve[1].nll, curve[2].nll)

    def test_single_point(self):
        curve = loss_sweep(self.dataset, 'p11', [0.9])
        self.assertEqual(len(curve), 1)
        self.assertGreater(curve[0].rmse, 0.0)

    def test_invalid_sweeps(self):
        with self.assertRaises(ConfigurationError):
            loss_sweep(self.dataset, 'sigma_r', [])
        with self.assertRaises(ConfigurationError):
            loss_sweep(self.dataset, 'p00', [1.5])
        with self.assertRaises(ConfigurationError):
            loss_sweep(self.dataset, 'p22', [0.5])

    def test_grids(self):
        for param, true_value in (('sigma_r', 8.0), ('sigma_v1', 20.0), ('p00', 0.95), ('p11', 0.987654)):
            grid = default_sweep_grid(param, true_value)
            self.assertIn(true_value, grid)
            self.assertEqual(grid, sorted(grid))
            self.assertGreaterEqual(len(grid), 41)
        self.assertEqual(default_sweep_grid('sigma_r', 8.0, points=1), [8.0])
        self.assertEqual(linear_grid(1.0, 2.0, 3), [1.0, 1.5, 2.0])
        with self.assertRaises(ConfigurationError):
            linear_grid(1.0, 2.0, 0)

    def test_plot_script(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'sweep_sigma_r.gp')
            write_plot_script(path, os.path.join(directory, 'sweep_sigma_r.csv'), 'sigma_r', 8.0)
            with open(path) as f:
                script = f.read()
        self.assertIn("set logscale x", script)
        self.assertIn("set arrow from 8.0,", script)
        self.assertIn("'sweep_sigma_r.csv'", script)
