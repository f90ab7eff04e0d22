"""CSV outputs: measurement and ground-truth exports, loss histories, evaluation and experiment rows, and sweep
curves.

Every writer takes a path and a sequence of rows and writes them through Python's :mod:`csv` module, with a header
row. Floats are written in their shortest round-tripping representation.

"""

import csv
import logging
import os
from typing import Any, Iterable, Sequence

from .errors import DatasetIOError


log = logging.getLogger(__name__)

MEASUREMENT_COLUMNS = ('t', 'zx', 'zy')
TRUTH_COLUMNS = ('t', 'px', 'vx', 'py', 'vy', 'mode', 'acceleration')
LOSS_COLUMNS = ('epoch', 'loss')
EVAL_COLUMNS = ('params', 'state_pred_rmse', 'state_post_rmse', 'mode_pred_mae', 'mode_post_mae', 'n_steps')
ABLATION_COLUMNS = ('config', 'metric', 'vs_untrained_pct', 'vs_true_pct', 'vs_untrained_median_pct',
                    'vs_true_median_pct', 'datasets', 'failed')
IMM_VS_KF_COLUMNS = ('setting', 'metric', 'imm_vs_kf_pct', 'imm_vs_kf_median_pct', 'datasets', 'failed')
SWEEP_COLUMNS = ('param_value', 'nll', 'rmse')


def _cell(value: Any) -> Any:
    if value is None:
        return ''
    elif isinstance(value, float):
        return repr(value)
    return value


def write_rows(path: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]):
    """Writes a header and rows to a CSV file.

    Raises:
        DatasetIOError: If the file cannot be written.

    """
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(columns)
            for row in rows:
                if len(row) != len(columns):
                    raise ValueError(f"Expected {len(columns)} cells but got {len(row)}")
                writer.writerow([_cell(value) for value in row])
    except OSError as e:
        raise DatasetIOError(f"Could not write {path}: {e.strerror or e!s}", path=path) from e
    log.debug(f"Wrote {path}")


def read_rows(path: str):
    """Reads a CSV file written by :func:`write_rows` as a list of dicts."""
    try:
        with open(path, 'r', newline='', encoding='utf-8') as f:
            return list(csv.DictReader(f))
    except OSError as e:
        raise DatasetIOError(f"Could not read {path}: {e.strerror or e!s}", path=path) from e


def write_measurements(path: str, measurements):
    write_rows(path, MEASUREMENT_COLUMNS, ((t, float(z[0]), float(z[1])) for t, z in enumerate(measurements)))


def write_truth(path: str, states, modes, accelerations):
    write_rows(path, TRUTH_COLUMNS, (
        (t, float(x[0]), float(x[1]), float(x[2]), float(x[3]), int(mode), float(acceleration))
        for t, (x, mode, acceleration) in enumerate(zip(states, modes, accelerations))
    ))


def write_loss_history(path: str, loss_history: Sequence[float]):
    write_rows(path, LOSS_COLUMNS, ((epoch, float(loss)) for epoch, loss in enumerate(loss_history)))


def write_sweep(path: str, curve):
    """Writes a sweep curve of ``(param_value, nll, rmse)`` points."""
    write_rows(path, SWEEP_COLUMNS, ((float(p.value), float(p.nll), float(p.rmse)) for p in curve))
