"""AMSGrad training of the filter parameters.

Gradient steps are taken on the unconstrained coordinates (:class:`immgrad.models.UnconstrainedParams`), with the
full training split contributing to every step. Coordinates can be frozen, in which case they keep their initial value
bit for bit.

"""

import logging
import time
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, DataError, TrainingAbortedError
from .filters import FilterOptions
from .loss import FILTER_ERRORS, dataset_nll
from .models import FilterParameters, ModelConfig, ParamVector, UnconstrainedParams, coordinate_names, \
    to_constrained, to_unconstrained
from .progress import StatusWriter


log = logging.getLogger(__name__)


class TrainConfig:
    """Hyperparameters of a training run."""

    def __init__(
            self, *,
            epochs: int = 1000,
            learning_rate: float = 0.02,
            beta1: float = 0.9,
            beta2: float = 0.999,
            epsilon: float = 1e-8,
            seed: int = 0,
            record_params: bool = False
    ):
        """Initializes and validates a training configuration.

        Raises:
            ConfigurationError: If a hyperparameter is out of range.

        """
        if int(epochs) != epochs or epochs < 1:
            raise ConfigurationError(f"The number of epochs must be a positive integer, not {epochs!r}", key='epochs')
        if not learning_rate > 0:
            raise ConfigurationError(f"The learning rate must be positive, not {learning_rate!r}", key='learning_rate')
        for name, beta in (('beta1', beta1), ('beta2', beta2)):
            if not 0.0 <= beta < 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1), not {beta!r}", key=name)
        if not epsilon >= 0:
            raise ConfigurationError(f"epsilon must be non-negative, not {epsilon!r}", key='epsilon')
        self.epochs: int = int(epochs)
        """The number of full-batch gradient steps, ``K``."""
        self.learning_rate: float = float(learning_rate)
        """The step size ``η``, applied in unconstrained space."""
        self.beta1: float = float(beta1)
        self.beta2: float = float(beta2)
        self.epsilon: float = float(epsilon)
        self.seed: int = int(seed)
        """The seed the initial parameters were drawn with. :func:`train` only records it in its report."""
        self.record_params: bool = bool(record_params)
        """Whether to keep the parameters of every epoch in :attr:`TrainReport.param_history`."""

    def to_dict(self) -> Dict[str, Any]:
        return {
            'epochs': self.epochs,
            'learning_rate': self.learning_rate,
            'beta1': self.beta1,
            'beta2': self.beta2,
            'epsilon': self.epsilon,
            'seed': self.seed,
            'record_params': self.record_params
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'TrainConfig':
        unknown = set(doc) - set(TrainConfig().to_dict())
        if unknown:
            raise ConfigurationError(f"Unknown training options: {', '.join(sorted(unknown))}",
                                     key=sorted(unknown)[0])
        return cls(**doc)

    def __eq__(self, other):
        return isinstance(other, TrainConfig) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"{self.__class__.__name__}({', '.join(f'{k}={v!r}' for k, v in self.to_dict().items())})"


class FreezeMask:
    """Which parameter groups are held fixed during training."""

    def __init__(self, *, sigma_v: bool = False, p_stay: bool = False, sigma_r: bool = False):
        self.sigma_v: bool = bool(sigma_v)
        """Freeze the process noise levels."""
        self.p_stay: bool = bool(p_stay)
        """Freeze the transition probabilities."""
        self.sigma_r: bool = bool(sigma_r)
        """Freeze the measurement noise level."""

    @classmethod
    def from_flags(cls, *, train_motion: bool, train_meas: bool) -> 'FreezeMask':
        """The mask of an ablation configuration: the motion model is ``σ_v`` together with ``p_stay``."""
        return cls(sigma_v=not train_motion, p_stay=not train_motion, sigma_r=not train_meas)

    def trainable(self, modes: int) -> List[bool]:
        """Returns, for each coordinate in slot order, whether it is trained."""
        flags = []
        for name in coordinate_names(modes):
            if name.startswith('sigma_v'):
                flags.append(not self.sigma_v)
            elif name == 'sigma_r':
                flags.append(not self.sigma_r)
            else:
                flags.append(not self.p_stay)
        return flags

    def to_dict(self) -> Dict[str, bool]:
        return {'sigma_v': self.sigma_v, 'p_stay': self.p_stay, 'sigma_r': self.sigma_r}

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'FreezeMask':
        return cls(**doc)

    def __eq__(self, other):
        return isinstance(other, FreezeMask) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"{self.__class__.__name__}(sigma_v={self.sigma_v!r}, p_stay={self.p_stay!r}, sigma_r={self.sigma_r!r})"


class AmsgradState:
    """The moment estimates of AMSGrad."""

    def __init__(self, m: np.ndarray, v: np.ndarray, v_hat: np.ndarray):
        self.m: np.ndarray = m
        self.v: np.ndarray = v
        self.v_hat: np.ndarray = v_hat
        """The running maximum of :attr:`v`."""

    @classmethod
    def zeros(cls, n: int) -> 'AmsgradState':
        return cls(np.zeros(n), np.zeros(n), np.zeros(n))


def amsgrad_step(
        u: UnconstrainedParams,
        grad: Sequence[float],
        state: AmsgradState,
        config: TrainConfig,
        mask: Optional[Sequence[bool]] = None,
        epoch: Optional[int] = None
) -> Tuple[UnconstrainedParams, AmsgradState]:
    """Takes one AMSGrad step::

        m ← β₁ m + (1 − β₁) g
        v ← β₂ v + (1 − β₂) g²
        v̂ ← max(v̂, v)
        u ← u − η m / (√v̂ + ε)

    Args:
        u: The current unconstrained parameters.
        grad: The gradient of the loss at :obj:`u`.
        state: The moment estimates.
        config: The hyperparameters.
        mask: Which coordinates to update; the others, and their moment estimates, are left untouched.
        epoch: The current epoch, for error context.

    Returns:
        Tuple[UnconstrainedParams, AmsgradState]: The updated parameters and moment estimates.

    Raises:
        TrainingAbortedError: If the gradient is not finite.

    """
    g = np.asarray(grad, dtype=float)
    vector = u.as_vector()
    if g.shape != vector.shape:
        raise ConfigurationError(f"The gradient has shape {g.shape} but there are {vector.shape[0]} coordinates")
    if not np.all(np.isfinite(g)):
        raise TrainingAbortedError(f"Non-finite gradient {g.tolist()!r}", epoch=epoch)
    if mask is None:
        active = np.ones(vector.shape, dtype=bool)
    else:
        active = np.asarray(mask, dtype=bool)
    m = np.where(active, config.beta1 * state.m + (1.0 - config.beta1) * g, state.m)
    v = np.where(active, config.beta2 * state.v + (1.0 - config.beta2) * g * g, state.v)
    v_hat = np.where(active, np.maximum(state.v_hat, v), state.v_hat)
    denominator = np.sqrt(v_hat) + config.epsilon
    step = np.divide(config.learning_rate * m, denominator, out=np.zeros_like(m), where=denominator > 0)
    updated = np.where(active, vector - step, vector)
    return UnconstrainedParams.from_vector(updated, u.m), AmsgradState(m, v, v_hat)


class TrainReport:
    """The outcome of :func:`train`."""

    def __init__(
            self,
            final_params: ParamVector,
            loss_history: Sequence[float],
            wall_time: float,
            initial_params: Optional[ParamVector] = None,
            param_history: Optional[Sequence[ParamVector]] = None,
            freeze: Optional[FreezeMask] = None,
            config: Optional[TrainConfig] = None,
            model_config: Optional[ModelConfig] = None
    ):
        self.final_params: ParamVector = final_params
        self.loss_history: List[float] = list(loss_history)
        """``loss_history[k]`` is the training loss at the parameters of epoch ``k``, before its update."""
        self.wall_time: float = wall_time
        """Seconds spent training."""
        self.initial_params: Optional[ParamVector] = initial_params
        self.param_history: Optional[List[ParamVector]] = None if param_history is None else list(param_history)
        self.freeze: Optional[FreezeMask] = freeze
        self.config: Optional[TrainConfig] = config
        self.model_config: Optional[ModelConfig] = model_config

    def to_dict(self) -> Dict[str, Any]:
        model_config = self.model_config
        doc: Dict[str, Any] = {
            'final_params': self.final_params.to_dict(model_config),
            'loss_history': self.loss_history,
            'wall_time': self.wall_time,
        }
        if self.initial_params is not None:
            doc['initial_params'] = self.initial_params.to_dict(model_config)
        if self.param_history is not None:
            doc['param_history'] = [p.to_dict(model_config) for p in self.param_history]
        if self.freeze is not None:
            doc['freeze'] = self.freeze.to_dict()
        if self.config is not None:
            doc['config'] = self.config.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'TrainReport':
        try:
            final_params, model_config = ParamVector.from_dict(doc['final_params'])
            initial = doc.get('initial_params', None)
            history = doc.get('param_history', None)
            return cls(
                final_params=final_params,
                loss_history=[float(x) for x in doc['loss_history']],
                wall_time=float(doc.get('wall_time', 0.0)),
                initial_params=None if initial is None else ParamVector.from_dict(initial)[0],
                param_history=None if history is None else [ParamVector.from_dict(p)[0] for p in history],
                freeze=None if 'freeze' not in doc else FreezeMask.from_dict(doc['freeze']),
                config=None if 'config' not in doc else TrainConfig.from_dict(doc['config']),
                model_config=model_config
            )
        except KeyError as e:
            raise DataError(f"Training report is missing {e.args[0]!r}") from e


def train(
        trajectories: Sequence,
        theta0: ParamVector,
        freeze: Optional[FreezeMask] = None,
        config: Optional[TrainConfig] = None,
        model_config: Optional[ModelConfig] = None,
        options: Optional[FilterOptions] = None,
        status: Optional[StatusWriter] = None
) -> TrainReport:
    """Trains the filter parameters on a split by full-batch AMSGrad on the measurement NLL.

    Args:
        trajectories: The training split.
        theta0: The initial parameters.
        freeze: Which parameter groups stay at their initial values. Defaults to training everything.
        config: The hyperparameters.
        model_config: The model configuration; its number of modes must match :obj:`theta0`.
        options: The filter options.
        status: Where to show a progress bar.

    Returns:
        TrainReport: The trained parameters and the loss of every epoch.

    Raises:
        TrainingAbortedError: If the loss or its gradient stops being finite, with the failing :attr:`epoch`.

    """
    if freeze is None:
        freeze = FreezeMask()
    if config is None:
        config = TrainConfig()
    if model_config is None:
        model_config = ModelConfig(modes=theta0.m)
    trainable = freeze.trainable(theta0.m)
    u = to_unconstrained(theta0)
    state = AmsgradState.zeros(len(trainable))
    loss_history: List[float] = []
    param_history: Optional[List[ParamVector]] = [] if config.record_params else None
    names = coordinate_names(theta0.m)
    log.info(f"Training {', '.join(n for n, t in zip(names, trainable) if t) or 'nothing'} for {config.epochs} "
             f"epochs on {len(trajectories)} trajectories, starting from {theta0}")
    if status is None:
        status = StatusWriter(quiet=True)
    start = time.perf_counter()
    with status.trange(config.epochs, desc='Training', leave=False, unit='epoch') as epochs:
        for epoch in epochs:
            try:
                loss = dataset_nll(trajectories, FilterParameters.lift(u, trainable), model_config, options)
            except FILTER_ERRORS as e:
                raise TrainingAbortedError(f"The filter failed during training: {e!s}", epoch=epoch) from e
            value = loss.value
            gradient = loss.gradient
            if not np.isfinite(value):
                raise TrainingAbortedError(f"Non-finite loss {value!r}", epoch=epoch)
            loss_history.append(value)
            if param_history is not None:
                param_history.append(_keep_frozen(to_constrained(u), theta0, trainable))
            log.debug(f"Epoch {epoch}: loss {value:.6f}, gradient "
                      f"{', '.join(f'{n}={g:.4g}' for n, g in zip(names, gradient))}")
            epochs.set_postfix(loss=f"{value:.3f}")
            u, state = amsgrad_step(u, gradient, state, config, trainable, epoch)
    wall_time = time.perf_counter() - start
    final = _keep_frozen(to_constrained(u), theta0, trainable)
    log.info(f"Finished training in {wall_time:.1f}s: loss {loss_history[0]:.4f} -> {loss_history[-1]:.4f}; "
             f"final parameters {final}")
    return TrainReport(
        final_params=final,
        loss_history=loss_history,
        wall_time=wall_time,
        initial_params=theta0,
        param_history=param_history,
        freeze=freeze,
        config=config,
        model_config=model_config
    )


def _keep_frozen(params: ParamVector, theta0: ParamVector, trainable: Sequence[bool]) -> ParamVector:
    # frozen coordinates come straight from theta0 so they survive without a log/exp round trip
    values = np.where(trainable, params.as_array(), theta0.as_array())
    return ParamVector.from_array(values, theta0.m)
