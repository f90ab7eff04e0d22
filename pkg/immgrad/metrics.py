"""Evaluation metrics of a parametrized filter on trajectories with known ground truth.

State errors are measured on the position components only, and aggregated as

    RMSE = sqrt(mean over steps, axes, and trajectories of the squared position error)

so a filter whose estimates scatter around the truth with standard deviation ``s`` on each axis has an RMSE of ``s``.
The prediction estimate at step ``t`` is the weighted mean of the predicted mode states; the posterior estimate is the
moment-matched posterior state. Mode errors compare the weight of the maneuvering mode (mode 1) with the indicator of
the true mode. Only steps ``t ≥ 2`` are scored, since the first two measurements initialize the filter.

"""

import logging
import math
from collections import defaultdict
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError, UndefinedBaselineError
from .filters import FilterOptions, ImmFilter, imm_combine
from .loss import FILTER_ERRORS
from .models import ImmModel, ModelConfig, ParamVector


log = logging.getLogger(__name__)

STATE_METRICS: Tuple[str, ...] = ('state_pred_rmse', 'state_post_rmse')
MODE_METRICS: Tuple[str, ...] = ('mode_pred_mae', 'mode_post_mae')
METRICS: Tuple[str, ...] = STATE_METRICS + MODE_METRICS

MANEUVER_MODE: int = 1
"""The mode whose weight the mode errors are computed from."""


class EvalResult:
    """The evaluation metrics of one filter on one split."""

    def __init__(
            self,
            state_pred_rmse: float,
            state_post_rmse: float,
            mode_pred_mae: Optional[float] = None,
            mode_post_mae: Optional[float] = None,
            n_steps: int = 0
    ):
        self.state_pred_rmse: float = state_pred_rmse
        """Position RMSE of the one-step-ahead predictions, in meters."""
        self.state_post_rmse: float = state_post_rmse
        """Position RMSE of the posterior estimates, in meters."""
        self.mode_pred_mae: Optional[float] = mode_pred_mae
        """Mean absolute error of the predicted maneuver-mode weight; :const:`None` for single-mode filters."""
        self.mode_post_mae: Optional[float] = mode_post_mae
        """Mean absolute error of the posterior maneuver-mode weight; :const:`None` for single-mode filters."""
        self.n_steps: int = n_steps
        """The number of scored steps, summed over trajectories."""

    def metrics(self) -> Dict[str, float]:
        """The metrics that are defined, by name."""
        return {name: getattr(self, name) for name in METRICS if getattr(self, name) is not None}

    def to_dict(self) -> Dict[str, Any]:
        doc: Dict[str, Any] = {name: getattr(self, name) for name in METRICS}
        doc['n_steps'] = self.n_steps
        return doc

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'EvalResult':
        try:
            return cls(**{name: doc.get(name, None) for name in METRICS}, n_steps=int(doc.get('n_steps', 0)))
        except (TypeError, ValueError) as e:
            raise DataError(f"Malformed evaluation result: {e!s}") from e

    def row(self, label: str) -> Tuple:
        """A row of :data:`immgrad.csv.EVAL_COLUMNS`."""
        return (label,) + tuple(getattr(self, name) for name in METRICS) + (self.n_steps,)

    def __eq__(self, other):
        return isinstance(other, EvalResult) and self.to_dict() == other.to_dict()

    def __repr__(self):
        fields = ', '.join(f"{name}={value!r}" for name, value in self.to_dict().items())
        return f"{self.__class__.__name__}({fields})"


def position_rmse(estimates: np.ndarray, truth: np.ndarray) -> float:
    """The RMSE of position estimates ``(..., 2)`` against the true positions, pooled over all axes."""
    errors = np.asarray(estimates, dtype=float) - np.asarray(truth, dtype=float)
    if errors.size == 0:
        raise DataError("Cannot compute an RMSE without estimates")
    return float(np.sqrt(np.mean(np.square(errors))))


class _Sums:
    """Per-trajectory sums of squared position errors and absolute mode errors."""

    def __init__(self, pred_sq: float, post_sq: float, pred_abs: float, post_abs: float, steps: int):
        self.pred_sq: float = float(pred_sq)
        self.post_sq: float = float(post_sq)
        self.pred_abs: float = float(pred_abs)
        self.post_abs: float = float(post_abs)
        self.steps: int = steps


def _positions(state) -> np.ndarray:
    return state.x.value[..., [0, 2], 0]


def _score(theta: ParamVector, states: np.ndarray, modes: np.ndarray, measurements: np.ndarray,
           config: ModelConfig, options: Optional[FilterOptions]) -> List[_Sums]:
    """Filters a batch ``(B, T, ·)`` of equally long trajectories and returns the error sums of each."""
    batch = measurements.shape[0]
    pred_sq = np.zeros(batch)
    post_sq = np.zeros(batch)
    pred_abs = np.zeros(batch)
    post_abs = np.zeros(batch)
    steps = 0
    for t, record in ImmFilter(ImmModel.build(theta, config), options).steps(measurements):
        truth = states[:, t, :][:, [0, 2]]
        pred_sq += np.sum(np.square(_positions(imm_combine(record.predicted)) - truth), axis=-1)
        post_sq += np.sum(np.square(_positions(imm_combine(record.posterior)) - truth), axis=-1)
        if theta.m > 1:
            indicator = (modes[:, t] == MANEUVER_MODE).astype(float)
            pred_abs += np.abs(record.predicted.weight_values()[..., MANEUVER_MODE] - indicator)
            post_abs += np.abs(record.posterior.weight_values()[..., MANEUVER_MODE] - indicator)
        steps += 1
    return [_Sums(pred_sq[b], post_sq[b], pred_abs[b], post_abs[b], steps) for b in range(batch)]


def evaluate(
        theta: ParamVector,
        trajectories: Sequence,
        config: Optional[ModelConfig] = None,
        options: Optional[FilterOptions] = None,
        ids: Optional[Sequence[int]] = None
) -> EvalResult:
    """Evaluates the filter parametrized by :obj:`theta` on trajectories with ground truth.

    Args:
        theta: The filter parameters; no derivatives are propagated.
        trajectories: :class:`immgrad.simulator.Trajectory` objects.
        config: The model configuration; defaults to ``τ = 1`` and the number of modes of :obj:`theta`.
        options: The filter options.
        ids: The index of each trajectory in its dataset, used to name failing trajectories.

    Raises:
        DataError: If there are no trajectories, or they are too short to score.
        FilterDivergenceError: With the failing :attr:`trajectory` and :attr:`step`.
        DegenerateWeightError: With the failing :attr:`trajectory` and :attr:`step`.

    """
    if config is None:
        config = ModelConfig(modes=theta.m)
    trajectories = list(trajectories)
    if not trajectories:
        raise DataError("Cannot evaluate on an empty split")
    if ids is None:
        ids = list(range(len(trajectories)))
    groups: Dict[int, List[int]] = defaultdict(list)
    for index, trajectory in enumerate(trajectories):
        if len(trajectory.measurements) <= ImmFilter.FIRST_STEP:
            raise DataError(f"Trajectories need more than {ImmFilter.FIRST_STEP} measurements to be evaluated",
                            trajectory=ids[index])
        groups[len(trajectory.measurements)].append(index)

    per_trajectory: List[Optional[_Sums]] = [None] * len(trajectories)
    for _, indices in sorted(groups.items()):
        try:
            sums = _score_indices(theta, trajectories, indices, config, options)
        except FILTER_ERRORS as e:
            # retry one trajectory at a time so the error names the failing trajectory
            for index in indices:
                try:
                    _score_indices(theta, trajectories, [index], config, options)
                except FILTER_ERRORS as single:
                    raise single.with_context(trajectory=ids[index]) from single
            raise e
        for index, s in zip(indices, sums):
            per_trajectory[index] = s

    n_steps = sum(s.steps for s in per_trajectory)
    # fsum is exactly rounded, so the result does not depend on the order of the trajectories
    pred_rmse = math.sqrt(math.fsum(s.pred_sq for s in per_trajectory) / (2 * n_steps))
    post_rmse = math.sqrt(math.fsum(s.post_sq for s in per_trajectory) / (2 * n_steps))
    if theta.m > 1:
        pred_mae = math.fsum(s.pred_abs for s in per_trajectory) / n_steps
        post_mae = math.fsum(s.post_abs for s in per_trajectory) / n_steps
    else:
        pred_mae = post_mae = None
    result = EvalResult(pred_rmse, post_rmse, pred_mae, post_mae, n_steps)
    log.debug(f"Evaluated {theta} on {len(trajectories)} trajectories: {result!r}")
    return result


def _score_indices(theta: ParamVector, trajectories: Sequence, indices: Sequence[int], config: ModelConfig,
                   options: Optional[FilterOptions]) -> List[_Sums]:
    return _score(
        theta,
        np.stack([trajectories[i].states for i in indices]),
        np.stack([trajectories[i].modes for i in indices]),
        np.stack([trajectories[i].measurements for i in indices]),
        config, options
    )


def relative_change(a: EvalResult, b: EvalResult, metrics: Optional[Sequence[str]] = None) -> Dict[str, float]:
    """The change of every metric of :obj:`a` relative to the baseline :obj:`b`, in percent.

    Negative values mean :obj:`a` improves on :obj:`b`.

    Args:
        a: The evaluated filter.
        b: The baseline.
        metrics: The metrics to compare; defaults to all metrics, which must then be defined for both results.

    Raises:
        DataError: If a requested metric is missing from either result.
        UndefinedBaselineError: If a baseline metric is zero.

    """
    a_metrics = a.metrics()
    b_metrics = b.metrics()
    if metrics is None:
        if set(a_metrics) != set(b_metrics):
            raise DataError(f"Cannot compare metrics {sorted(a_metrics)} with {sorted(b_metrics)}")
        metrics = [name for name in METRICS if name in a_metrics]
    changes = {}
    for name in metrics:
        if name not in a_metrics or name not in b_metrics:
            raise DataError(f"Metric {name!r} is not defined for both results")
        if b_metrics[name] == 0:
            raise UndefinedBaselineError(f"The baseline {name} is zero", metric=name)
        changes[name] = 100.0 * (a_metrics[name] - b_metrics[name]) / b_metrics[name]
    return changes
