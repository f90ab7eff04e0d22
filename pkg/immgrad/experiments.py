"""Experiments over many simulated datasets.

* :func:`run_ablation` trains one filter configuration on a series of datasets and compares the trained filter with
  the untrained filter it started from and with the filter that uses the true dataset parameters.
  :func:`run_ablation_grid` does so for every configuration of :data:`TABLE_I_CONFIGURATIONS`.
* :func:`run_imm_vs_kf` trains a two-mode IMM filter and a single-mode Kalman filter on the same two-mode data.
* :func:`loss_sweep` evaluates the loss and the posterior RMSE while varying a single parameter around its true value.

Dataset ``k`` of an experiment is generated from a seed derived from ``(base_seed, k)`` only, so every dataset's
outcome is independent of the number of worker processes and of the order in which datasets finish.

"""

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from itertools import chain, repeat
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import csv as csvmodule
from . import json as jsonmodule
from .errors import ConfigurationError, DatasetIOError, ImmGradError
from .filters import FilterOptions
from .loss import dataset_nll
from .metrics import EvalResult, METRICS, STATE_METRICS, evaluate, relative_change
from .models import ModelConfig, ParamVector
from .optimizer import FreezeMask, TrainConfig, train
from .printer import Printer
from .progress import StatusWriter
from .simulator import DEFAULT_LENGTH, DEFAULT_TRAJECTORIES, Dataset, P_STAY_INTERVAL, SIGMA_R_INTERVAL, \
    generate_dataset, sample_initial_params, sigma_v_interval


log = logging.getLogger(__name__)

DESK_DATASETS: int = 20
"""The default number of datasets of an experiment."""

FULL_DATASETS: int = 100
"""The number of datasets of the full study."""

TABLE_I_CONFIGURATIONS: Tuple[Tuple[int, bool, bool], ...] = (
    (2, True, True),
    (2, True, False),
    (2, False, True),
    (1, True, True),
    (1, True, False),
    (1, False, True),
)
"""The ``(modes, train_motion, train_meas)`` configurations of the ablation study."""

IMM_VS_KF_SETTINGS: Tuple[Tuple[str, bool, bool], ...] = (
    ('motion+meas', True, True),
    ('motion', True, False),
    ('meas', False, True),
)
"""The ``(label, train_motion, train_meas)`` settings of the IMM versus Kalman filter comparison."""


def dataset_seed(base_seed: int, index: int) -> int:
    """The seed of dataset :obj:`index` of an experiment."""
    return int(np.random.SeedSequence(base_seed, spawn_key=(index,)).generate_state(1)[0])


def apply_freeze_rule(sampled: ParamVector, true_params: ParamVector, freeze: FreezeMask) -> ParamVector:
    """Initial parameters: frozen coordinates take their true value and the others their sampled value."""
    trainable = freeze.trainable(sampled.m)
    return ParamVector.from_array(np.where(trainable, sampled.as_array(), true_params.as_array()), sampled.m)


class AblationSpec:
    """One experiment configuration."""

    def __init__(
            self, *,
            n_datasets: int = DESK_DATASETS,
            modes: int = 2,
            train_motion: bool = True,
            train_meas: bool = True,
            base_seed: int = 0,
            train_config: Optional[TrainConfig] = None,
            trajectories: int = DEFAULT_TRAJECTORIES,
            length: int = DEFAULT_LENGTH,
            tau: float = 1.0,
            weight_floor: float = 1e-12
    ):
        """Initializes and validates an experiment configuration.

        Raises:
            ConfigurationError: If nothing is trained, or a count is not positive.

        """
        if not train_motion and not train_meas:
            raise ConfigurationError("An experiment must train the motion model, the measurement model, or both",
                                     key='train_motion')
        for key, value in (('n_datasets', n_datasets), ('modes', modes), ('trajectories', trajectories)):
            if int(value) != value or value < 1:
                raise ConfigurationError(f"{key} must be a positive integer, not {value!r}", key=key)
        if trajectories < 2:
            raise ConfigurationError("An experiment needs at least two trajectories to split into train and test",
                                     key='trajectories')
        self.n_datasets: int = int(n_datasets)
        self.modes: int = int(modes)
        self.train_motion: bool = bool(train_motion)
        """Train ``σ_v`` of every mode and the transition probabilities."""
        self.train_meas: bool = bool(train_meas)
        """Train ``σ_r``."""
        self.base_seed: int = int(base_seed)
        self.train_config: TrainConfig = train_config if train_config is not None else TrainConfig()
        self.trajectories: int = int(trajectories)
        """Trajectories per dataset."""
        self.length: int = int(length)
        """Measurements per trajectory."""
        self.tau: float = float(tau)
        self.weight_floor: float = float(weight_floor)
        ModelConfig(tau=self.tau, modes=self.modes)
        FilterOptions(weight_floor=self.weight_floor)

    @property
    def label(self) -> str:
        """Names the configuration like the ablation table does, *e.g.*, ``"2 Yes No"``."""
        return f"{self.modes} {'Yes' if self.train_motion else 'No'} {'Yes' if self.train_meas else 'No'}"

    @property
    def freeze(self) -> FreezeMask:
        return FreezeMask.from_flags(train_motion=self.train_motion, train_meas=self.train_meas)

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(tau=self.tau, modes=self.modes)

    @property
    def options(self) -> FilterOptions:
        return FilterOptions(weight_floor=self.weight_floor)

    def replace(self, **changes) -> 'AblationSpec':
        doc = self.to_dict()
        doc['train_config'] = self.train_config
        doc.update(changes)
        return AblationSpec(**doc)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'n_datasets': self.n_datasets,
            'modes': self.modes,
            'train_motion': self.train_motion,
            'train_meas': self.train_meas,
            'base_seed': self.base_seed,
            'train_config': self.train_config.to_dict(),
            'trajectories': self.trajectories,
            'length': self.length,
            'tau': self.tau,
            'weight_floor': self.weight_floor
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'AblationSpec':
        """Parses the document produced by :meth:`AblationSpec.to_dict`; missing keys take their defaults.

        Raises:
            ConfigurationError: On an unknown key or an invalid value.

        """
        if not isinstance(doc, dict):
            raise ConfigurationError(f"An experiment configuration must be a mapping, not {type(doc).__name__}")
        unknown = set(doc) - set(AblationSpec().to_dict())
        if unknown:
            raise ConfigurationError(f"Unknown experiment options: {', '.join(sorted(unknown))}",
                                     key=sorted(unknown)[0])
        doc = dict(doc)
        if 'train_config' in doc:
            doc['train_config'] = TrainConfig.from_dict(doc['train_config'])
        try:
            return cls(**doc)
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"Invalid experiment configuration: {e!s}") from e

    def __eq__(self, other):
        return isinstance(other, AblationSpec) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"{self.__class__.__name__}({', '.join(f'{k}={v!r}' for k, v in self.to_dict().items())})"


class DatasetOutcome:
    """What one dataset contributed to an experiment."""

    def __init__(
            self,
            index: int,
            seed: int,
            params: Optional[Dict[str, ParamVector]] = None,
            evaluations: Optional[Dict[str, EvalResult]] = None,
            changes: Optional[Dict[str, Dict[str, float]]] = None,
            error: Optional[str] = None
    ):
        self.index: int = index
        self.seed: int = seed
        self.params: Dict[str, ParamVector] = params or {}
        """The parameters of every compared filter, by filter name."""
        self.evaluations: Dict[str, EvalResult] = evaluations or {}
        self.changes: Dict[str, Dict[str, float]] = changes or {}
        """Relative changes in percent, by comparison and then by metric."""
        self.error: Optional[str] = error
        """The error that ended this dataset's run, if any."""

    @property
    def failed(self) -> bool:
        return self.error is not None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'index': self.index,
            'seed': self.seed,
            'params': {name: p.to_dict() for name, p in self.params.items()},
            'evaluations': {name: e.to_dict() for name, e in self.evaluations.items()},
            'changes': self.changes,
            'error': self.error
        }


def _nan_to_none(value: float) -> Optional[float]:
    return None if value is None or math.isnan(value) else value


class AblationRow:
    """The aggregated relative changes of one experiment configuration."""

    COMPARISONS: Tuple[str, ...] = ('vs_untrained', 'vs_true')

    def __init__(self, label: str, outcomes: Sequence[DatasetOutcome], comparisons: Sequence[str] = COMPARISONS,
                 spec: Optional[AblationSpec] = None):
        self.label: str = label
        self.outcomes: List[DatasetOutcome] = sorted(outcomes, key=lambda o: o.index)
        self.comparisons: Tuple[str, ...] = tuple(comparisons)
        self.spec: Optional[AblationSpec] = spec
        completed = [o for o in self.outcomes if not o.failed]
        if completed:
            shared = set.intersection(*(set(o.changes.get(self.comparisons[0], {})) for o in completed))
        else:
            shared = set()
        self.metrics: Tuple[str, ...] = tuple(name for name in METRICS if name in shared)
        """The metrics compared, in table order; mode metrics are absent for single-mode filters."""
        self.mean: Dict[str, Dict[str, float]] = {}
        """The mean relative change over completed datasets, by comparison and metric."""
        self.median: Dict[str, Dict[str, float]] = {}
        """The median relative change over completed datasets, by comparison and metric."""
        for comparison in self.comparisons:
            self.mean[comparison] = {}
            self.median[comparison] = {}
            for metric in self.metrics:
                values = np.array([o.changes[comparison][metric] for o in completed])
                self.mean[comparison][metric] = float(np.mean(values))
                self.median[comparison][metric] = float(np.median(values))

    @property
    def datasets(self) -> int:
        """The number of datasets that completed."""
        return sum(1 for o in self.outcomes if not o.failed)

    @property
    def failed(self) -> List[int]:
        return [o.index for o in self.outcomes if o.failed]

    @property
    def partial(self) -> bool:
        """Whether any dataset failed, so that fewer datasets than requested were aggregated."""
        return bool(self.failed)

    def csv_rows(self) -> List[Tuple]:
        """One row per metric: the label, the metric, every mean change, every median change, and the counts."""
        return [
            (self.label, metric)
            + tuple(_nan_to_none(self.mean[c][metric]) for c in self.comparisons)
            + tuple(_nan_to_none(self.median[c][metric]) for c in self.comparisons)
            + (self.datasets, len(self.failed))
            for metric in self.metrics
        ]

    def to_dict(self) -> Dict[str, Any]:
        doc = {
            'label': self.label,
            'mean': self.mean,
            'median': self.median,
            'datasets': self.datasets,
            'failed': self.failed,
            'outcomes': [o.to_dict() for o in self.outcomes]
        }
        if self.spec is not None:
            doc['spec'] = self.spec.to_dict()
        return doc


DatasetWorker = Callable[[AblationSpec, int], DatasetOutcome]


def _map_datasets(worker: DatasetWorker, spec: AblationSpec, jobs: int, status: Optional[StatusWriter],
                  desc: str) -> List[DatasetOutcome]:
    if status is None:
        status = StatusWriter(quiet=True)
    indices = range(spec.n_datasets)
    if jobs <= 1:
        outcomes = (worker(spec, index) for index in indices)
        return list(status.tqdm(outcomes, total=spec.n_datasets, desc=desc, leave=False, unit='dataset'))
    with ProcessPoolExecutor(max_workers=jobs) as executor:
        outcomes = executor.map(worker, repeat(spec), indices)
        return list(status.tqdm(outcomes, total=spec.n_datasets, desc=desc, leave=False, unit='dataset'))


def _report_failures(label: str, outcomes: Iterable[DatasetOutcome]):
    for outcome in outcomes:
        if outcome.failed:
            log.warning(f"{label}: dataset {outcome.index} (seed {outcome.seed}) failed: {outcome.error}")
        else:
            log.debug(f"{label}: dataset {outcome.index} (seed {outcome.seed}): {outcome.changes}")


def _ablation_dataset(spec: AblationSpec, index: int) -> DatasetOutcome:
    seed = dataset_seed(spec.base_seed, index)
    try:
        dataset = generate_dataset(seed, spec.trajectories, spec.length, spec.modes, spec.tau)
        initial = apply_freeze_rule(sample_initial_params(seed, spec.modes), dataset.true_params, spec.freeze)
        report = train(dataset.train, initial, spec.freeze, spec.train_config, dataset.config, spec.options)
        params = {'trained': report.final_params, 'initial': initial, 'true': dataset.true_params}
        evaluations = {
            name: evaluate(theta, dataset.test, dataset.config, spec.options, dataset.test_indices)
            for name, theta in params.items()
        }
        changes = {
            'vs_untrained': relative_change(evaluations['trained'], evaluations['initial']),
            'vs_true': relative_change(evaluations['trained'], evaluations['true'])
        }
    except ImmGradError as e:
        return DatasetOutcome(index, seed, error=f"{e.__class__.__name__}: {e!s}")
    return DatasetOutcome(index, seed, params, evaluations, changes)


def run_ablation(spec: AblationSpec, jobs: int = 1, status: Optional[StatusWriter] = None) -> AblationRow:
    """Trains and evaluates one configuration on :attr:`AblationSpec.n_datasets` datasets.

    For every dataset, the initial parameters are drawn like the true parameters (but from an independent stream),
    except that frozen coordinates start at their true values. The trained filter is compared on the test split with
    its untrained starting point and with the filter using the true parameters.

    Args:
        spec: The configuration.
        jobs: The number of worker processes.
        status: Where to show a progress bar.

    Returns:
        AblationRow: The aggregated changes; if a dataset failed, it is left out and the row is marked partial.

    """
    log.info(f"Ablation {spec.label!r}: {spec.n_datasets} datasets from base seed {spec.base_seed}, {jobs} job(s)")
    outcomes = _map_datasets(_ablation_dataset, spec, jobs, status, desc=f"Ablation {spec.label}")
    _report_failures(spec.label, outcomes)
    row = AblationRow(spec.label, outcomes, spec=spec)
    if row.partial:
        log.warning(f"Ablation {spec.label!r} is partial: {len(row.failed)} of {spec.n_datasets} datasets failed")
    return row


def run_ablation_grid(base: AblationSpec, jobs: int = 1, status: Optional[StatusWriter] = None,
                      configurations: Sequence[Tuple[int, bool, bool]] = TABLE_I_CONFIGURATIONS) -> List[AblationRow]:
    """Runs :func:`run_ablation` for every ``(modes, train_motion, train_meas)`` configuration, with the remaining
    options taken from :obj:`base`."""
    return [
        run_ablation(base.replace(modes=modes, train_motion=motion, train_meas=meas), jobs, status)
        for modes, motion, meas in configurations
    ]


def _imm_vs_kf_dataset(spec: AblationSpec, index: int) -> DatasetOutcome:
    seed = dataset_seed(spec.base_seed, index)
    try:
        dataset = generate_dataset(seed, spec.trajectories, spec.length, spec.modes, spec.tau)
        imm_initial = apply_freeze_rule(sample_initial_params(seed, spec.modes), dataset.true_params, spec.freeze)
        # the Kalman filter starts from the non-maneuvering mode of the IMM filter
        kf_initial = ParamVector(imm_initial.sigma_v[:1], None, imm_initial.sigma_r)
        kf_config = ModelConfig(tau=spec.tau, modes=1)
        imm = train(dataset.train, imm_initial, spec.freeze, spec.train_config, dataset.config, spec.options)
        kf = train(dataset.train, kf_initial, spec.freeze, spec.train_config, kf_config, spec.options)
        params = {'imm': imm.final_params, 'kf': kf.final_params}
        evaluations = {
            'imm': evaluate(imm.final_params, dataset.test, dataset.config, spec.options, dataset.test_indices),
            'kf': evaluate(kf.final_params, dataset.test, kf_config, spec.options, dataset.test_indices)
        }
        changes = {'imm_vs_kf': relative_change(evaluations['imm'], evaluations['kf'], STATE_METRICS)}
    except ImmGradError as e:
        return DatasetOutcome(index, seed, error=f"{e.__class__.__name__}: {e!s}")
    return DatasetOutcome(index, seed, params, evaluations, changes)


def run_imm_vs_kf(
        spec: AblationSpec,
        jobs: int = 1,
        status: Optional[StatusWriter] = None,
        settings: Optional[Sequence[Tuple[str, bool, bool]]] = None
) -> List[AblationRow]:
    """Compares trained two-mode IMM filters with trained Kalman filters on the same two-mode datasets.

    Args:
        spec: The dataset and training options; its train flags are overridden by each setting.
        jobs: The number of worker processes.
        status: Where to show a progress bar.
        settings: ``(label, train_motion, train_meas)`` triples; defaults to :data:`IMM_VS_KF_SETTINGS`.

    Returns:
        List[AblationRow]: One row per setting, comparing the state RMSEs of the IMM filter with the Kalman filter.

    Raises:
        ConfigurationError: If :obj:`spec` does not describe two-mode data.

    """
    if spec.modes != 2:
        raise ConfigurationError(f"The IMM versus Kalman filter comparison needs two-mode data, not {spec.modes}",
                                 key='modes')
    if settings is None:
        settings = IMM_VS_KF_SETTINGS
    rows = []
    for label, motion, meas in settings:
        setting = spec.replace(train_motion=motion, train_meas=meas)
        log.info(f"IMM vs KF {label!r}: {setting.n_datasets} datasets from base seed {setting.base_seed}")
        outcomes = _map_datasets(_imm_vs_kf_dataset, setting, jobs, status, desc=f"IMM vs KF {label}")
        _report_failures(label, outcomes)
        row = AblationRow(label, outcomes, comparisons=('imm_vs_kf',), spec=setting)
        if row.partial:
            log.warning(f"IMM vs KF {label!r} is partial: {len(row.failed)} of {setting.n_datasets} datasets failed")
        rows.append(row)
    return rows


def settings_by_label(labels: Sequence[str]) -> List[Tuple[str, bool, bool]]:
    known = {setting[0]: setting for setting in IMM_VS_KF_SETTINGS}
    for label in labels:
        if label not in known:
            raise ConfigurationError(f"Unknown comparison setting {label!r}; valid settings are "
                                     f"{', '.join(known)}", key='settings')
    return [known[label] for label in labels]


class ExperimentPlan:
    """What an experiment file asks for: the kind of experiment and its configurations.

    An experiment file holds either a single configuration (the keys of :meth:`AblationSpec.to_dict`), or shared keys
    plus a ``configs`` list of per-configuration overrides, or ``"grid": true`` for every configuration of
    :data:`TABLE_I_CONFIGURATIONS`. ``"experiment": "imm_vs_kf"`` selects the IMM versus Kalman filter comparison,
    optionally restricted to ``"settings"``.

    """

    ABLATION = 'ablation'
    IMM_VS_KF = 'imm_vs_kf'

    def __init__(self, experiment: str, specs: Sequence[AblationSpec],
                 settings: Optional[Sequence[Tuple[str, bool, bool]]] = None):
        if experiment not in (self.ABLATION, self.IMM_VS_KF):
            raise ConfigurationError(f"Unknown experiment {experiment!r}; expected {self.ABLATION!r} or "
                                     f"{self.IMM_VS_KF!r}", key='experiment')
        self.experiment: str = experiment
        self.specs: List[AblationSpec] = list(specs)
        self.settings: Optional[List[Tuple[str, bool, bool]]] = None if settings is None else list(settings)

    @classmethod
    def from_document(cls, doc: Any, overrides: Optional[Dict[str, Any]] = None) -> 'ExperimentPlan':
        """Parses an experiment file.

        Args:
            doc: The parsed document.
            overrides: Options that replace the document's shared keys, *e.g.*, from the command line.

        """
        if not isinstance(doc, dict):
            raise ConfigurationError(f"An experiment file must hold a mapping, not {type(doc).__name__}")
        doc = dict(doc)
        experiment = doc.pop('experiment', cls.ABLATION)
        configs = doc.pop('configs', None)
        grid = bool(doc.pop('grid', False))
        settings = doc.pop('settings', None)
        if overrides:
            doc.update(overrides)
        if configs is not None and grid:
            raise ConfigurationError("An experiment file may give either 'configs' or 'grid', not both", key='grid')
        if grid:
            configs = [{'modes': m, 'train_motion': motion, 'train_meas': meas}
                       for m, motion, meas in TABLE_I_CONFIGURATIONS]
        if configs is None:
            specs = [AblationSpec.from_dict(doc)]
        else:
            if not isinstance(configs, list) or not configs:
                raise ConfigurationError("'configs' must be a non-empty list of mappings", key='configs')
            specs = [AblationSpec.from_dict({**doc, **config}) for config in configs]
        if settings is not None:
            if experiment != cls.IMM_VS_KF:
                raise ConfigurationError("'settings' only applies to the imm_vs_kf experiment", key='settings')
            if isinstance(settings, str) and settings == 'all':
                settings = None
            else:
                settings = settings_by_label(settings)
        return cls(experiment, specs, settings)

    def run(self, jobs: int = 1, status: Optional[StatusWriter] = None) -> List[AblationRow]:
        rows: List[AblationRow] = []
        for spec in self.specs:
            if self.experiment == self.IMM_VS_KF:
                rows.extend(run_imm_vs_kf(spec, jobs, status, self.settings))
            else:
                rows.append(run_ablation(spec, jobs, status))
        return rows


def write_rows_csv(path: str, rows: Sequence[AblationRow]):
    """Writes ablation rows, or IMM versus Kalman filter rows, with the matching columns."""
    if rows and rows[0].comparisons == ('imm_vs_kf',):
        columns = csvmodule.IMM_VS_KF_COLUMNS
    else:
        columns = csvmodule.ABLATION_COLUMNS
    csvmodule.write_rows(path, columns, chain.from_iterable(row.csv_rows() for row in rows))


def save_outcomes(path: str, rows: Sequence[AblationRow]):
    """Writes every row together with its per-dataset outcomes as a JSON document."""
    jsonmodule.save({'rows': [row.to_dict() for row in rows]}, path)


def print_summary(printer: Printer, rows: Sequence[AblationRow], title: Optional[str] = None):
    """Prints a table with one line per row and metric; changes are colored by sign."""
    if not rows:
        return
    comparisons = rows[0].comparisons
    headers = ['config', 'metric'] + [f"{c} mean" for c in comparisons] + [f"{c} median" for c in comparisons] \
        + ['datasets', 'failed']
    table = list(chain.from_iterable(row.csv_rows() for row in rows))
    printer.table(headers, table, percent_columns=range(2, 2 + 2 * len(comparisons)), title=title)


class SweepPoint:
    """One point of a loss projection."""

    def __init__(self, value: float, nll: float, rmse: float):
        self.value: float = value
        """The value of the swept parameter."""
        self.nll: float = nll
        """The measurement NLL of the whole dataset."""
        self.rmse: float = rmse
        """The posterior position RMSE over the whole dataset, in meters."""

    def __repr__(self):
        return f"{self.__class__.__name__}(value={self.value!r}, nll={self.nll!r}, rmse={self.rmse!r})"


def loss_sweep(
        dataset: Dataset,
        param: str,
        grid: Sequence[float],
        options: Optional[FilterOptions] = None,
        status: Optional[StatusWriter] = None
) -> List[SweepPoint]:
    """Projects the loss onto one parameter: every other parameter stays at its true value.

    Args:
        dataset: The dataset; every trajectory contributes.
        param: The coordinate to vary, *e.g.*, ``"sigma_r"`` or ``"p11"``.
        grid: The values to evaluate.
        options: The filter options.
        status: Where to show a progress bar.

    Raises:
        ConfigurationError: If :obj:`param` is not a coordinate of the dataset's model, the grid is empty, or a grid
            value is out of the parameter's range.

    """
    true_params = dataset.true_params
    true_value = true_params[param]
    if len(grid) == 0:
        raise ConfigurationError("A sweep needs at least one grid value", key='grid')
    if status is None:
        status = StatusWriter(quiet=True)
    trajectories = dataset.trajectories
    ids = list(range(len(trajectories)))
    log.info(f"Sweeping {param} over {len(grid)} values around its true value {true_value!r}")
    curve = []
    for value in status.tqdm(grid, desc=f"Sweeping {param}", leave=False, unit='point'):
        theta = true_params.replace(param, float(value))
        nll = dataset_nll(trajectories, theta, dataset.config, options, ids).value
        rmse = evaluate(theta, trajectories, dataset.config, options, ids).state_post_rmse
        log.debug(f"{param}={float(value)!r}: NLL {nll:.6f}, posterior RMSE {rmse:.4f}")
        curve.append(SweepPoint(float(value), nll, rmse))
    return curve


def parameter_reach(param: str) -> Tuple[float, float]:
    """The range a default sweep grid of a noise parameter is clipped to: a quarter of the lower end to four times
    the upper end of its sampling interval."""
    if param.startswith('sigma_v'):
        low, high = sigma_v_interval(int(param[len('sigma_v'):]))
    elif param == 'sigma_r':
        low, high = SIGMA_R_INTERVAL
    else:
        low, high = P_STAY_INTERVAL
    return low / 4.0, high * 4.0


def default_sweep_grid(param: str, true_value: float, points: int = 41) -> List[float]:
    """The neighbourhood of :obj:`true_value` to sweep, which always contains :obj:`true_value` itself.

    Noise levels are swept on a log-spaced grid from a quarter to four times the true value, and transition
    probabilities on a linear grid over ``[0.9, 0.9999]``.

    """
    if points < 1:
        raise ConfigurationError(f"A sweep needs at least one point, not {points}", key='points')
    if param.startswith('p'):
        grid = np.linspace(0.9, 0.9999, points)
    else:
        low, high = parameter_reach(param)
        start = max(0.25 * true_value, low)
        stop = min(4.0 * true_value, high)
        grid = np.geomspace(start, stop, points) if points > 1 else np.array([true_value])
    return sorted(set(float(v) for v in grid) | {float(true_value)})


def linear_grid(start: float, stop: float, points: int) -> List[float]:
    """``points`` evenly spaced values from :obj:`start` to :obj:`stop`, inclusive."""
    if points < 1:
        raise ConfigurationError(f"A sweep needs at least one point, not {points}", key='points')
    return [float(v) for v in np.linspace(start, stop, points)]


def write_plot_script(path: str, csv_path: str, param: str, true_value: float):
    """Writes a gnuplot script plotting the NLL and the posterior RMSE of a sweep CSV against the parameter, with the
    true value marked."""
    image = os.path.splitext(os.path.basename(csv_path))[0] + '.png'
    lines = [
        "set datafile separator ','",
        "set key top center",
        "set terminal pngcairo size 900,540",
        f"set output '{image}'",
        f"set xlabel '{param}'",
        "set ylabel 'measurement NLL'",
        "set y2label 'posterior position RMSE [m]'",
        "set ytics nomirror",
        "set y2tics",
    ]
    if param.startswith('sigma'):
        lines.append("set logscale x")
    lines.extend([
        f"set arrow from {true_value!r}, graph 0 to {true_value!r}, graph 1 nohead dashtype 2",
        f"plot '{os.path.basename(csv_path)}' skip 1 using 1:2 with linespoints title 'NLL' axes x1y1, \\",
        "     '' skip 1 using 1:3 with linespoints title 'posterior RMSE' axes x1y2",
        ""
    ])
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write('\n'.join(lines))
    except OSError as e:
        raise DatasetIOError(f"Could not write {path}: {e.strerror or e!s}", path=path) from e
    log.debug(f"Wrote {path}")
