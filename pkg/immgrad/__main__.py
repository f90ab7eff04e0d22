import argparse
import logging
import os
import sys
from typing import Any, Callable, Dict, List

from . import csv as csvmodule
from . import experiments
from . import json as jsonmodule
from . import printer as printermodule
from . import version
from .config import RunConfig, FORMATS_BY_NAME, default_jobs, load_document
from .errors import ConfigurationError, DataError, ImmGradError, exit_code_for
from .filters import FilterOptions
from .metrics import evaluate
from .models import ModelConfig, ParamVector, coordinate_names
from .optimizer import FreezeMask, TrainConfig, TrainReport, train
from .printer import Printer
from .progress import StatusWriter
from .simulator import DEFAULT_LENGTH, DEFAULT_TRAJECTORIES, Dataset, generate_dataset, sample_initial_params


log = logging.getLogger('immgrad')

SWEEP_PARAMETERS = coordinate_names(2)
"""Every parameter that can be swept; single-mode datasets only have ``sigma_v0`` and ``sigma_r``."""

GLOBAL_OPTIONS = ('config', 'config_format', 'jobs', 'log_level', 'debug', 'quiet', 'no_status', 'color', 'no_color')


def _params_table(printer: Printer, theta: ParamVector, title: str):
    printer.table(('parameter', 'value'), [(name, value) for name, value in theta.coordinates()], title=title)


def load_params(source: str, dataset: Dataset, use_initial: bool = False) -> ParamVector:
    """Reads the parameters to evaluate: ``true`` for the dataset's true parameters, a parameter file, or a training
    report (its final parameters, or its initial parameters if :obj:`use_initial`)."""
    if source == 'true':
        if use_initial:
            raise ConfigurationError("--use-initial needs a training report, not 'true'", key='use_initial')
        return dataset.true_params
    doc = jsonmodule.load(source)
    if isinstance(doc, dict) and 'final_params' in doc:
        report = TrainReport.from_dict(doc)
        if not use_initial:
            return report.final_params
        if report.initial_params is None:
            raise DataError(f"The training report {source} does not record its initial parameters")
        return report.initial_params
    elif use_initial:
        raise ConfigurationError(f"--use-initial needs a training report, but {source} holds parameters",
                                 key='use_initial')
    return ParamVector.from_dict(doc)[0]


def cmd_simulate(args, printer: Printer) -> int:
    dataset = generate_dataset(args.seed, args.trajectories, args.length, args.modes, args.tau)
    dataset.save(args.out)
    log.info(f"Wrote {len(dataset)} trajectories to {args.out}")
    if args.export_csv is not None:
        paths = dataset.export_csv(args.export_csv)
        log.info(f"Exported {len(paths)} CSV files to {args.export_csv}")
    _params_table(printer, dataset.true_params, f"True parameters of dataset {args.seed}")
    return 0


def cmd_train(args, printer: Printer) -> int:
    dataset = Dataset.load(args.DATASET)
    freeze = FreezeMask.from_flags(train_motion=not args.freeze_motion, train_meas=not args.freeze_measurement)
    seed = args.seed if args.seed is not None else (dataset.seed if dataset.seed is not None else 0)
    if args.init == 'random':
        theta0 = experiments.apply_freeze_rule(
            sample_initial_params(seed, dataset.config.m), dataset.true_params, freeze
        )
    else:
        theta0 = load_params(args.init, dataset)
        if theta0.m != dataset.config.m:
            raise ConfigurationError(f"The initial parameters have {theta0.m} modes but the dataset has "
                                     f"{dataset.config.m}", key='init')
    config = TrainConfig(
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        beta1=args.beta1,
        beta2=args.beta2,
        epsilon=args.epsilon,
        seed=seed,
        record_params=args.record_params
    )
    status = StatusWriter(quiet=args.quiet_status)
    options = FilterOptions(weight_floor=args.weight_floor)
    report = train(dataset.train, theta0, freeze, config, dataset.config, options, status)
    jsonmodule.save(report.to_dict(), args.out)
    loss_csv = args.loss_csv
    if loss_csv is None:
        loss_csv = f"{os.path.splitext(args.out)[0]}_loss.csv"
    csvmodule.write_loss_history(loss_csv, report.loss_history)
    log.info(f"Wrote the training report to {args.out} and the loss history to {loss_csv}")
    _params_table(printer, report.final_params, f"Trained parameters (final loss {report.loss_history[-1]:.4f})")
    return 0


def cmd_evaluate(args, printer: Printer) -> int:
    dataset = Dataset.load(args.DATASET)
    theta = load_params(args.params, dataset, args.use_initial)
    config = ModelConfig(tau=dataset.config.tau, modes=theta.m)
    if args.split == 'train':
        indices = dataset.train_indices
    elif args.split == 'test':
        indices = dataset.test_indices
    else:
        indices = list(range(len(dataset)))
    result = evaluate(theta, [dataset.trajectories[i] for i in indices], config,
                      FilterOptions(weight_floor=args.weight_floor), indices)
    row = result.row(args.params if not args.use_initial else f"{args.params} (initial)")
    if args.out is not None:
        csvmodule.write_rows(args.out, csvmodule.EVAL_COLUMNS, [row])
    printer.table(csvmodule.EVAL_COLUMNS, [row], title=f"Evaluation on the {args.split} split of {args.DATASET}")
    return 0


def cmd_ablation(args, printer: Printer) -> int:
    overrides: Dict[str, Any] = {}
    if args.full:
        overrides['n_datasets'] = experiments.FULL_DATASETS
    if args.n_datasets is not None:
        overrides['n_datasets'] = args.n_datasets
    if args.base_seed is not None:
        overrides['base_seed'] = args.base_seed
    plan = experiments.ExperimentPlan.from_document(load_document(args.spec), overrides)
    if args.epochs is not None:
        plan.specs = [
            spec.replace(train_config=TrainConfig.from_dict({**spec.train_config.to_dict(), 'epochs': args.epochs}))
            for spec in plan.specs
        ]
    for spec in plan.specs:
        log.info(f"Experiment {plan.experiment} configuration: {spec!r}")
    rows = plan.run(args.jobs, StatusWriter(quiet=args.quiet_status))
    experiments.write_rows_csv(args.out, rows)
    if args.outcomes is not None:
        experiments.save_outcomes(args.outcomes, rows)
    title = 'IMM versus Kalman filter' if plan.experiment == plan.IMM_VS_KF else 'Ablation'
    experiments.print_summary(printer, rows, title=f"{title} (relative changes, negative is better)")
    return 0


def cmd_sweep(args, printer: Printer) -> int:
    dataset = Dataset.load(args.DATASET)
    if args.param == 'all':
        params = list(dataset.true_params.coordinate_names())
    else:
        params = [args.param]
    if (args.start is None) != (args.stop is None):
        raise ConfigurationError("--from and --to must be given together", key='from')
    options = FilterOptions(weight_floor=args.weight_floor)
    status = StatusWriter(quiet=args.quiet_status)
    stem, extension = os.path.splitext(args.out)
    for param in params:
        true_value = dataset.true_params[param]
        if args.start is not None:
            grid = experiments.linear_grid(args.start, args.stop, args.points)
        else:
            grid = experiments.default_sweep_grid(param, true_value, args.points)
        curve = experiments.loss_sweep(dataset, param, grid, options, status)
        path = args.out if len(params) == 1 else f"{stem}_{param}{extension or '.csv'}"
        csvmodule.write_sweep(path, curve)
        if not args.no_plot:
            experiments.write_plot_script(f"{os.path.splitext(path)[0]}.gp", path, param, true_value)
        best = min(curve, key=lambda point: point.nll)
        log.info(f"{param}: NLL is smallest at {best.value!r} (true value {true_value!r}); wrote {path}")
        printer.write(f"{param}: true {true_value:.6g}, NLL minimum at {best.value:.6g}\n")
    return 0


COMMANDS: Dict[str, Callable[..., int]] = {
    'simulate': cmd_simulate,
    'train': cmd_train,
    'evaluate': cmd_evaluate,
    'ablation': cmd_ablation,
    'sweep': cmd_sweep,
}


def _add_filter_options(parser: argparse.ArgumentParser):
    parser.add_argument('--weight-floor', type=float, default=1e-12,
                        help='the smallest predicted mode weight; 0 disables clamping (default=1e-12)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='immgrad',
        description='Gradient-based training of interacting multiple model (IMM) tracking filters on simulated '
                    'two-dimensional trajectories.'
    )
    parser.add_argument('--config', type=str, default=None,
                        help='a JSON, JSON5, or YAML file of option defaults; top-level keys apply to every command '
                             'and a mapping under a command name applies to that command only')
    parser.add_argument('--config-format', type=str, default=None, choices=sorted(FORMATS_BY_NAME),
                        help='the format of the --config file (default is to use its extension)')
    parser.add_argument('--jobs', '-j', type=int, default=None,
                        help='the number of worker processes for experiments (default is $IMMGRAD_JOBS, or 1)')
    parser.add_argument(
        '--no-status',
        action='store_true',
        help='do not display progress bars'
    )
    color_group = parser.add_mutually_exclusive_group()
    color_group.add_argument(
        '--color', '-c',
        action='store_true',
        default=None,
        help='force ANSI color output; this is turned on by default only if run from a TTY'
    )
    color_group.add_argument(
        '--no-color',
        action='store_true',
        default=None,
        help='do not use ANSI color in the output'
    )
    log_section = parser.add_argument_group(title='logging')
    log_group = log_section.add_mutually_exclusive_group()
    log_group.add_argument('--log-level', type=str, default='INFO', choices=list(
        logging.getLevelName(x)
        for x in range(1, 101)
        if not logging.getLevelName(x).startswith('Level')
    ), help='sets the log level for immgrad (default=INFO)')
    log_group.add_argument('--debug', action='store_true', help='equivalent to `--log-level=DEBUG`')
    log_group.add_argument('--quiet', action='store_true', help='equivalent to `--log-level=CRITICAL --no-status`')
    parser.add_argument('--version', '-v', action='store_true', help='print immgrad\'s version information to STDERR')

    commands = parser.add_subparsers(dest='command', title='commands', metavar='COMMAND')

    simulate = commands.add_parser('simulate', help='generate a simulated dataset')
    simulate.add_argument('--seed', type=int, default=0, help='the dataset seed (default=0)')
    simulate.add_argument('--out', '-o', type=str, required=True, help='the dataset JSON file to write')
    simulate.add_argument('--trajectories', type=int, default=DEFAULT_TRAJECTORIES,
                          help=f'the number of trajectories (default={DEFAULT_TRAJECTORIES})')
    simulate.add_argument('--length', type=int, default=DEFAULT_LENGTH,
                          help=f'the number of measurements per trajectory (default={DEFAULT_LENGTH})')
    simulate.add_argument('--modes', type=int, default=2, help='the number of motion modes (default=2)')
    simulate.add_argument('--tau', type=float, default=1.0, help='the time step in seconds (default=1.0)')
    simulate.add_argument('--export-csv', type=str, default=None, metavar='DIR',
                          help='also write per-trajectory measurement and ground-truth CSV files to DIR')

    train_parser = commands.add_parser('train', help='train filter parameters on the training split of a dataset')
    train_parser.add_argument('DATASET', type=str, help='the dataset JSON file')
    train_parser.add_argument('--init', type=str, default='random',
                              help='`random` to draw the initial parameters like the true ones (frozen parameters '
                                   'start at their true values), or a parameter file (default=random)')
    train_parser.add_argument('--seed', type=int, default=None,
                              help='seeds the random initial parameters (default is the dataset seed)')
    train_parser.add_argument('--freeze-motion', action='store_true',
                              help='keep the process noise levels (m/s²) and transition probabilities fixed')
    train_parser.add_argument('--freeze-measurement', action='store_true',
                              help='keep the measurement noise level (m) fixed')
    train_parser.add_argument('--epochs', type=int, default=1000, help='the number of AMSGrad steps (default=1000)')
    train_parser.add_argument('--learning-rate', type=float, default=0.02,
                              help='the AMSGrad step size in unconstrained coordinates (default=0.02)')
    train_parser.add_argument('--beta1', type=float, default=0.9, help='the first moment decay (default=0.9)')
    train_parser.add_argument('--beta2', type=float, default=0.999, help='the second moment decay (default=0.999)')
    train_parser.add_argument('--epsilon', type=float, default=1e-8,
                              help='added to the AMSGrad denominator (default=1e-8)')
    train_parser.add_argument('--record-params', action='store_true',
                              help='record the parameters of every epoch in the report')
    train_parser.add_argument('--out', '-o', type=str, required=True, help='the training report JSON file to write')
    train_parser.add_argument('--loss-csv', type=str, default=None,
                              help='the loss history CSV file to write (default is OUT with a `_loss.csv` suffix)')
    _add_filter_options(train_parser)

    evaluate_parser = commands.add_parser('evaluate', help='evaluate filter parameters against the ground truth')
    evaluate_parser.add_argument('DATASET', type=str, help='the dataset JSON file')
    evaluate_parser.add_argument('--params', type=str, required=True,
                                 help='`true` for the true dataset parameters, a parameter file, or a training report')
    evaluate_parser.add_argument('--use-initial', action='store_true',
                                 help='evaluate the initial rather than the trained parameters of a training report')
    evaluate_parser.add_argument('--split', choices=('test', 'train', 'all'), default='test',
                                 help='the trajectories to evaluate on (default=test)')
    evaluate_parser.add_argument('--out', '-o', type=str, default=None,
                                 help='a CSV file for the metrics: RMSEs in meters, mode MAEs in [0, 1]')
    _add_filter_options(evaluate_parser)

    ablation = commands.add_parser('ablation', help='run an ablation or IMM versus Kalman filter experiment')
    ablation.add_argument('--spec', type=str, required=True,
                          help='the experiment file (JSON, JSON5, or YAML)')
    ablation.add_argument('--out', '-o', type=str, required=True,
                          help='the CSV file of relative changes in percent')
    ablation.add_argument('--outcomes', type=str, default=None,
                          help='a JSON file for the per-dataset parameters, metrics, and failures')
    ablation.add_argument('--full', action='store_true',
                          help=f'use {experiments.FULL_DATASETS} datasets instead of the default '
                               f'{experiments.DESK_DATASETS}')
    ablation.add_argument('--n-datasets', type=int, default=None, help='override the number of datasets')
    ablation.add_argument('--base-seed', type=int, default=None, help='override the base seed')
    ablation.add_argument('--epochs', type=int, default=None, help='override the number of training epochs')

    sweep = commands.add_parser('sweep', help='project the loss onto one parameter')
    sweep.add_argument('DATASET', type=str, help='the dataset JSON file')
    sweep.add_argument('--param', choices=SWEEP_PARAMETERS + ('all',), required=True,
                       help='the parameter to vary (σ in m/s² or m, p dimensionless), or `all`')
    sweep.add_argument('--from', dest='start', type=float, default=None,
                       help='the first grid value (default is a neighbourhood of the true value)')
    sweep.add_argument('--to', dest='stop', type=float, default=None, help='the last grid value')
    sweep.add_argument('--points', type=int, default=41, help='the number of grid values (default=41)')
    sweep.add_argument('--out', '-o', type=str, required=True,
                       help='the CSV file to write; with `--param all`, one file per parameter named after it')
    sweep.add_argument('--no-plot', action='store_true', help='do not write a gnuplot script next to the CSV')
    _add_filter_options(sweep)

    return parser


def _subparsers(parser: argparse.ArgumentParser) -> Dict[str, argparse.ArgumentParser]:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return dict(action.choices)
    return {}


def _apply_config(parser: argparse.ArgumentParser, argv: List[str]):
    preliminary = argparse.ArgumentParser(add_help=False)
    preliminary.add_argument('--config', type=str, default=None)
    preliminary.add_argument('--config-format', type=str, default=None)
    known, _ = preliminary.parse_known_args(argv)
    if known.config is None:
        return
    run_config = RunConfig.load(known.config, COMMANDS.keys(), known.config_format)
    run_config.apply(_subparsers(parser), GLOBAL_OPTIONS)
    global_defaults = {key: value for key, value in run_config.defaults.items() if key in GLOBAL_OPTIONS}
    global_defaults.pop('config', None)
    global_defaults.pop('config_format', None)
    if global_defaults:
        parser.set_defaults(**global_defaults)


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv

    parser = build_parser()
    try:
        _apply_config(parser, argv[1:])
    except ImmGradError as e:
        sys.stderr.write(f"{e!s}\n")
        return exit_code_for(e)

    args = parser.parse_args(argv[1:])

    if args.debug:
        numeric_log_level = logging.DEBUG
    elif args.quiet:
        numeric_log_level = logging.CRITICAL
    else:
        numeric_log_level = getattr(logging, args.log_level.upper(), None)
        if not isinstance(numeric_log_level, int):
            sys.stderr.write(f'Invalid log level: {args.log_level}')
            return 1

    if args.version:
        sys.stderr.write(f"immgrad version {version.VERSION_STRING}\n")
        if args.command is None:
            return 0

    if args.command is None:
        parser.print_usage(sys.stderr)
        sys.stderr.write("immgrad: error: a command is required\n")
        return 2

    if args.no_color:
        ansi_color = False
    elif args.color:
        ansi_color = True
    else:
        ansi_color = None

    args.quiet_status = args.no_status or args.quiet
    printer = Printer(sys.stdout, ansi_color=ansi_color, quiet=args.quiet_status)
    printermodule.DEFAULT_PRINTER = printer

    logging.basicConfig(level=numeric_log_level, stream=StatusWriter(sys.stderr, quiet=args.quiet_status))

    try:
        if args.jobs is None:
            args.jobs = default_jobs()
        elif args.jobs < 1:
            raise ConfigurationError(f"--jobs must be positive, not {args.jobs}", key='jobs')
        resolved = ', '.join(f"{key}={value!r}" for key, value in sorted(vars(args).items()))
        log.info(f"immgrad {version.VERSION_STRING} {args.command}: {resolved}")
        with printer:
            return COMMANDS[args.command](args, printer)
    except ImmGradError as e:
        log.error(f"{e.__class__.__name__}: {e!s}")
        return exit_code_for(e)
    except KeyboardInterrupt:
        return 1
    finally:
        printer.close()


if __name__ == '__main__':
    sys.exit(main())
