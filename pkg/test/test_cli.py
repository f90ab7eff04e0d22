import io
import os
import tempfile
from typing import Tuple
from unittest import TestCase
from unittest.mock import patch

from immgrad import json as jsonmodule
from immgrad.__main__ import main
from immgrad.csv import EVAL_COLUMNS, read_rows, SWEEP_COLUMNS
from immgrad.metrics import METRICS
from immgrad.optimizer import TrainReport
from immgrad.simulator import Dataset


def run(*args: str) -> Tuple[int, str]:
    """Runs the command line interface and returns its exit code and standard output."""
    with patch('sys.stdout', new_callable=io.StringIO) as stdout, patch('sys.stderr', new_callable=io.StringIO):
        code = main(['immgrad', '--quiet', *args])
        return code, stdout.getvalue()


class TestCommandLine(TestCase):
    def setUp(self):
        self._directory = tempfile.TemporaryDirectory()
        self.directory = self._directory.name
        self.dataset_path = self.path('dataset.json')
        code, output = run('simulate', '--seed', '4', '--trajectories', '4', '--length', '30', '--out',
                           self.dataset_path)
        self.assertEqual(code, 0)
        self.assertIn('sigma_r', output)

    def tearDown(self):
        self._directory.cleanup()

    def path(self, name: str) -> str:
        return os.path.join(self.directory, name)

    def test_simulate_is_deterministic(self):
        again = self.path('again.json')
        self.assertEqual(run('simulate', '--seed', '4', '--trajectories', '4', '--length', '30', '--out', again)[0],
                         0)
        with open(self.dataset_path) as first, open(again) as second:
            self.assertEqual(first.read(), second.read())
        dataset = Dataset.load(again)
        self.assertEqual(len(dataset), 4)
        self.assertEqual(dataset.seed, 4)

    def test_config_file(self):
        config = self.path('run.yaml')
        with open(config, 'w') as f:
            f.write("simulate:\n  trajectories: 3\n  length: 12\n")
        out = self.path('configured.json')
        self.assertEqual(run('--config', config, 'simulate', '--out', out)[0], 0)
        dataset = Dataset.load(out)
        self.assertEqual(len(dataset), 3)
        self.assertEqual(len(dataset.trajectories[0].measurements), 12)
        # the command line wins over the file
        self.assertEqual(run('--config', config, 'simulate', '--length', '15', '--out', out)[0], 0)
        self.assertEqual(len(Dataset.load(out).trajectories[0].measurements), 15)
        with open(config, 'w') as f:
            f.write("simulate:\n  trajectory: 3\n")
        self.assertEqual(run('--config', config, 'simulate', '--out', out)[0], 1)

    def test_train_and_evaluate(self):
        report_path = self.path('report.json')
        code, output = run('train', self.dataset_path, '--epochs', '2', '--freeze-measurement', '--out', report_path)
        self.assertEqual(code, 0)
        self.assertIn('Trained parameters', output)
        report = TrainReport.from_dict(jsonmodule.load(report_path))
        self.assertEqual(len(report.loss_history), 2)
        dataset = Dataset.load(self.dataset_path)
        self.assertEqual(report.final_params.sigma_r, dataset.true_params.sigma_r)
        losses = read_rows(self.path('report_loss.csv'))
        self.assertEqual([float(row['loss']) for row in losses], report.loss_history)

        eval_path = self.path('eval.csv')
        self.assertEqual(run('evaluate', self.dataset_path, '--params', 'true', '--split', 'all', '--out',
                             eval_path)[0], 0)
        rows = read_rows(eval_path)
        self.assertEqual(tuple(rows[0].keys()), EVAL_COLUMNS)
        self.assertEqual(rows[0]['params'], 'true')
        self.assertEqual(int(rows[0]['n_steps']), 4 * 28)

        self.assertEqual(run('evaluate', self.dataset_path, '--params', report_path, '--use-initial', '--out',
                             eval_path)[0], 0)
        rows = read_rows(eval_path)
        self.assertEqual(rows[0]['params'], f"{report_path} (initial)")
        self.assertEqual(int(rows[0]['n_steps']), 2 * 28)
        self.assertEqual(run('evaluate', self.dataset_path, '--params', 'true', '--use-initial')[0], 1)

    def test_sweep(self):
        out = self.path('sweep.csv')
        code, output = run('sweep', self.dataset_path, '--param', 'sigma_r', '--from', '2', '--to', '32',
                           '--points', '3', '--out', out)
        self.assertEqual(code, 0)
        self.assertIn('NLL minimum', output)
        rows = read_rows(out)
        self.assertEqual(tuple(rows[0].keys()), SWEEP_COLUMNS)
        self.assertEqual([float(row['param_value']) for row in rows], [2.0, 17.0, 32.0])
        self.assertTrue(os.path.exists(self.path('sweep.gp')))
        self.assertEqual(run('sweep', self.dataset_path, '--param', 'sigma_r', '--from', '2', '--points', '3',
                             '--out', out)[0], 1)

    def test_ablation(self):
        spec = self.path('experiment.json')
        jsonmodule.save({'n_datasets': 1, 'trajectories': 4, 'length': 20}, spec)
        out = self.path('ablation.csv')
        outcomes = self.path('outcomes.json')
        code, output = run('ablation', '--spec', spec, '--epochs', '2', '--out', out, '--outcomes', outcomes)
        self.assertEqual(code, 0)
        self.assertIn('Ablation', output)
        rows = read_rows(out)
        self.assertEqual([row['metric'] for row in rows], list(METRICS))
        self.assertEqual(jsonmodule.load(outcomes)['rows'][0]['spec']['train_config']['epochs'], 2)

    def test_invalid_arguments(self):
        with patch('sys.stderr', new_callable=io.StringIO):
            with self.assertRaises(SystemExit) as context:
                main(['immgrad', 'sweep', self.dataset_path, '--param', 'sigma_q', '--out', self.path('x.csv')])
        self.assertEqual(context.exception.code, 2)
        self.assertEqual(run()[0], 2)
        self.assertEqual(run('--jobs', '0', 'simulate', '--out', self.path('x.json'))[0], 1)
        self.assertEqual(run('train', self.path('missing.json'), '--out', self.path('report.json'))[0], 1)

    def test_version(self):
        with patch('sys.stderr', new_callable=io.StringIO) as stderr:
            self.assertEqual(main(['immgrad', '--version']), 0)
        self.assertIn('immgrad version', stderr.getvalue())
