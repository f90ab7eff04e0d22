"""The measurement negative log-likelihood training objective.

The loss of a parametrization ``θ`` on a measurement sequence is the sum over steps of the negative log density of
each measurement under the filter's one-step-ahead predicted measurement distribution::

    L(θ) = −Σ_{t≥2} log N(z_t; ẑ_{t|t−1}(θ), Ŝ_{t|t−1}(θ))

The first two measurements initialize the filter and are not scored. No ground truth is needed.

"""

import logging
from collections import defaultdict
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .autodiff import DiffScalar
from .errors import DataError, DegenerateWeightError, FilterDivergenceError, ImmGradError, NumericDomainError
from .filters import FilterOptions, ImmFilter
from .models import FilterParameters, ImmModel, ModelConfig, ParamVector, UnconstrainedParams


log = logging.getLogger(__name__)

MIN_LENGTH: int = 3
"""The shortest measurement sequence that contributes to the loss."""

FILTER_ERRORS = (FilterDivergenceError, DegenerateWeightError, NumericDomainError)


class LossValue:
    """The loss of a whole split of trajectories."""

    def __init__(self, total: DiffScalar, per_trajectory: Sequence[DiffScalar], steps_counted: int):
        self.total: DiffScalar = total
        """The loss and, in its tangent, its gradient."""
        self.per_trajectory: List[DiffScalar] = list(per_trajectory)
        """The loss of each trajectory, in the order the trajectories were given."""
        self.steps_counted: int = steps_counted
        """The number of measurements scored."""

    @property
    def value(self) -> float:
        return float(self.total.value)

    @property
    def gradient(self) -> np.ndarray:
        """The gradient of the loss with respect to each tangent slot."""
        return np.array(self.total.tangent, dtype=float)

    def __repr__(self):
        return f"{self.__class__.__name__}(value={self.value!r}, steps_counted={self.steps_counted!r})"


def _measurements(trajectory) -> np.ndarray:
    return np.asarray(getattr(trajectory, 'measurements', trajectory), dtype=float)


def trajectory_nll(
        measurements: np.ndarray,
        params: Union[FilterParameters, ParamVector],
        config: ModelConfig,
        options: Optional[FilterOptions] = None
) -> DiffScalar:
    """The negative log-likelihood of a measurement sequence.

    Args:
        measurements: ``(T, 2)``, or ``(B, T, 2)`` for a batch of equally long sequences.
        params: The filter parameters; differentiable parameters produce the gradient in the result's tangent.
        config: The model configuration.
        options: The filter options.

    Returns:
        DiffScalar: The loss, batched like :obj:`measurements`.

    Raises:
        DataError: If the sequence has fewer than three measurements.
        FilterDivergenceError: With the failing :attr:`step`.

    """
    measurements = np.asarray(measurements, dtype=float)
    if measurements.ndim < 2 or measurements.shape[-2] < MIN_LENGTH:
        raise DataError(f"The loss needs at least {MIN_LENGTH} measurements per trajectory, but the sequence has "
                        f"shape {measurements.shape}")
    model = ImmModel.build(params, config)
    total: Optional[DiffScalar] = None
    for t, record in ImmFilter(model, options).steps(measurements):
        term = -record.meas_prediction.log_likelihood(measurements[..., t, :])
        total = term if total is None else total + term
    return total


def _group_by_length(sequences: Sequence[np.ndarray]) -> Dict[int, List[int]]:
    groups: Dict[int, List[int]] = defaultdict(list)
    for index, sequence in enumerate(sequences):
        groups[sequence.shape[0]].append(index)
    return groups


def _isolate_failure(sequences: Sequence[np.ndarray], indices: Sequence[int], ids: Sequence[int],
                     params, config: ModelConfig, options: Optional[FilterOptions], error: ImmGradError):
    for index in indices:
        try:
            trajectory_nll(sequences[index], params, config, options)
        except FILTER_ERRORS as e:
            raise e.with_context(trajectory=ids[index]) from e
    # every trajectory succeeds on its own, so report the batch failure as is
    raise error


def dataset_nll(
        trajectories: Sequence,
        params: Union[FilterParameters, ParamVector],
        config: ModelConfig,
        options: Optional[FilterOptions] = None,
        ids: Optional[Sequence[int]] = None
) -> LossValue:
    """The negative log-likelihood of a split, summed over its trajectories.

    Trajectories of equal length are filtered together as one batch. The total is accumulated in the order the
    trajectories are given, so that the result does not depend on how they were batched.

    Args:
        trajectories: :class:`immgrad.simulator.Trajectory` objects, or ``(T, 2)`` measurement arrays.
        params: The filter parameters.
        config: The model configuration.
        options: The filter options.
        ids: The index of each trajectory in its dataset, used to name failing trajectories. Defaults to the position
            in :obj:`trajectories`.

    Raises:
        DataError: If :obj:`trajectories` is empty or a trajectory is too short.
        FilterDivergenceError: With the failing :attr:`trajectory` and :attr:`step`.
        DegenerateWeightError: With the failing :attr:`trajectory` and :attr:`step`.

    """
    sequences = [_measurements(t) for t in trajectories]
    if not sequences:
        raise DataError("Cannot compute the loss of an empty split")
    if ids is None:
        ids = list(range(len(sequences)))
    per_trajectory: List[Optional[DiffScalar]] = [None] * len(sequences)
    for length, indices in sorted(_group_by_length(sequences).items()):
        if length < MIN_LENGTH:
            raise DataError(f"Trajectories need at least {MIN_LENGTH} measurements for the loss, but this one has "
                            f"{length}", trajectory=ids[indices[0]])
        batch = np.stack([sequences[i] for i in indices])
        try:
            losses = trajectory_nll(batch, params, config, options)
        except FILTER_ERRORS as e:
            _isolate_failure(sequences, indices, ids, params, config, options, e)
        for k, index in enumerate(indices):
            per_trajectory[index] = losses[k]
    total = per_trajectory[0]
    for loss in per_trajectory[1:]:
        total = total + loss
    steps = sum(sequence.shape[0] - (MIN_LENGTH - 1) for sequence in sequences)
    return LossValue(total, per_trajectory, steps)


def loss_and_gradient(
        u: UnconstrainedParams,
        trajectories: Sequence,
        config: ModelConfig,
        trainable: Optional[Sequence[bool]] = None,
        options: Optional[FilterOptions] = None
) -> Tuple[float, np.ndarray]:
    """Evaluates the split loss and its gradient with respect to the unconstrained coordinates.

    Frozen coordinates have a gradient of exactly zero.

    """
    loss = dataset_nll(trajectories, FilterParameters.lift(u, trainable), config, options)
    return loss.value, loss.gradient
