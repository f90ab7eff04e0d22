"""Simulated tracking datasets.

A dataset is generated from a single seed:

#. the true parameters are drawn uniformly from fixed intervals (:func:`sample_dataset_params`);
#. every trajectory starts at rest at the origin, in a mode drawn from the stationary distribution of the mode
   transition matrix, then switches modes as a Markov chain and moves according to the DWNA model of its current mode;
   and
#. every state is observed as its position plus white Gaussian noise.

Each trajectory draws from its own random stream, derived from the dataset seed and the trajectory index, so datasets
are reproducible regardless of the order (or the process) in which trajectories are generated.

"""

import logging
import os
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import csv as csvmodule
from . import json as jsonmodule
from .errors import ConfigurationError, DataError
from .models import MEAS_DIM, STATE_DIM, ModelConfig, ParamVector, selector, transition_model, unit_process_noise


log = logging.getLogger(__name__)

SIGMA_V_INTERVALS: Tuple[Tuple[float, float], ...] = ((1e-3, 0.98), (9.81, 49.1))
"""Sampling intervals of ``σ_v`` for the non-maneuvering and the maneuvering mode, in m/s²."""

P_STAY_INTERVAL: Tuple[float, float] = (0.95, 0.999)
SIGMA_R_INTERVAL: Tuple[float, float] = (1.0, 25.0)
"""Sampling interval of ``σ_r``, in meters."""

DEFAULT_TRAJECTORIES: int = 60
DEFAULT_LENGTH: int = 120

INITIAL_PARAMS_STREAM: int = 2 ** 32
"""The spawn key of the random stream that draws initial (untrained) parameters for a dataset."""


def substream(seed: int, *key: int) -> np.random.Generator:
    """Returns the random generator of stream :obj:`key` of :obj:`seed`."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def sigma_v_interval(mode: int) -> Tuple[float, float]:
    """The sampling interval of ``σ_v`` of a mode; every mode after the first is a maneuvering mode."""
    return SIGMA_V_INTERVALS[min(mode, len(SIGMA_V_INTERVALS) - 1)]


def sample_dataset_params(rng: np.random.Generator, modes: int = 2) -> ParamVector:
    """Draws parameters uniformly from the sampling intervals.

    Draws are made in slot order: ``σ_v`` of every mode, then ``p^{ii}`` of every mode (for two or more modes), then
    ``σ_r``.

    """
    if modes < 1:
        raise ConfigurationError(f"The number of modes must be positive, not {modes}", key='m')
    sigma_v = [rng.uniform(*sigma_v_interval(i)) for i in range(modes)]
    if modes > 1:
        p_stay = [rng.uniform(*P_STAY_INTERVAL) for _ in range(modes)]
    else:
        p_stay = None
    sigma_r = rng.uniform(*SIGMA_R_INTERVAL)
    return ParamVector(sigma_v, p_stay, sigma_r)


def transition_probabilities(theta: ParamVector) -> np.ndarray:
    """The numeric mode transition matrix, splitting ``1 − p^{ii}`` evenly over the other modes."""
    m = theta.m
    if m == 1:
        return np.ones((1, 1))
    p = np.empty((m, m))
    for i, stay in enumerate(theta.p_stay):
        p[i, :] = (1.0 - stay) / (m - 1)
        p[i, i] = stay
    return p


def stationary_distribution(transition: np.ndarray) -> np.ndarray:
    """The stationary distribution ``π = π Π`` of a Markov chain, or the uniform distribution if it is not unique."""
    m = transition.shape[0]
    system = np.vstack([transition.T - np.eye(m), np.ones((1, m))])
    target = np.zeros(m + 1)
    target[-1] = 1.0
    pi, _, rank, _ = np.linalg.lstsq(system, target, rcond=None)
    if rank < m or not np.all(np.isfinite(pi)) or np.any(pi < -1e-12):
        return np.full(m, 1.0 / m)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def _noise_factor(config: ModelConfig) -> np.ndarray:
    if config.tau == 0.0:
        return np.zeros((STATE_DIM, STATE_DIM))
    return np.linalg.cholesky(unit_process_noise(config))


class Trajectory:
    """One simulated target track."""

    def __init__(self, states: np.ndarray, modes: np.ndarray, measurements: np.ndarray):
        self.states: np.ndarray = np.asarray(states, dtype=float)
        """The true states, ``(T, 4)``."""
        self.modes: np.ndarray = np.asarray(modes, dtype=int)
        """The true mode of every step, ``(T,)``."""
        self.measurements: np.ndarray = np.asarray(measurements, dtype=float)
        """The measured positions, ``(T, 2)``."""
        length = len(self.states)
        if self.states.shape != (length, STATE_DIM) or self.modes.shape != (length,) \
                or self.measurements.shape != (length, MEAS_DIM):
            raise DataError(f"Inconsistent trajectory shapes: states {self.states.shape}, modes {self.modes.shape}, "
                            f"measurements {self.measurements.shape}")

    def __len__(self):
        return len(self.states)

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, [0, 2]]

    def accelerations(self, tau: float = 1.0) -> np.ndarray:
        """The magnitude of the mean acceleration over each step, ``|v_t − v_{t−1}| / τ``; zero at ``t = 0``."""
        velocities = self.states[:, [1, 3]]
        accelerations = np.zeros(len(self))
        if len(self) > 1 and tau > 0:
            accelerations[1:] = np.linalg.norm(np.diff(velocities, axis=0), axis=1) / tau
        return accelerations

    def to_dict(self) -> Dict[str, Any]:
        return {'states': self.states, 'modes': self.modes, 'measurements': self.measurements}

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'Trajectory':
        try:
            return cls(np.array(doc['states'], dtype=float), np.array(doc['modes'], dtype=int),
                       np.array(doc['measurements'], dtype=float))
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"Malformed trajectory: {e!s}") from e

    def __eq__(self, other):
        return isinstance(other, Trajectory) and np.array_equal(self.states, other.states) \
            and np.array_equal(self.modes, other.modes) and np.array_equal(self.measurements, other.measurements)


def generate_trajectory(theta: ParamVector, length: int, rng: np.random.Generator,
                        config: Optional[ModelConfig] = None) -> Trajectory:
    """Simulates one trajectory.

    Args:
        theta: The true parameters.
        length: The number of steps ``T``.
        rng: The random stream of this trajectory.
        config: The model configuration; defaults to ``τ = 1`` and the number of modes of :obj:`theta`.

    """
    if length < 2:
        raise ConfigurationError(f"A trajectory needs at least two steps, not {length}", key='length')
    if config is None:
        config = ModelConfig(modes=theta.m)
    m = theta.m
    F = transition_model(config)
    H = selector()
    factor = _noise_factor(config)
    transition = transition_probabilities(theta)

    modes = np.empty(length, dtype=int)
    modes[0] = rng.choice(m, p=stationary_distribution(transition))
    for t in range(1, length):
        modes[t] = rng.choice(m, p=transition[modes[t - 1]])

    states = np.zeros((length, STATE_DIM))
    for t in range(1, length):
        noise = theta.sigma_v[modes[t - 1]] * (factor @ rng.standard_normal(STATE_DIM))
        states[t] = F @ states[t - 1] + noise

    measurements = states @ H.T + theta.sigma_r * rng.standard_normal((length, MEAS_DIM))
    return Trajectory(states, modes, measurements)


class Dataset:
    """Simulated trajectories together with the parameters that generated them."""

    def __init__(
            self,
            trajectories: Sequence[Trajectory],
            true_params: ParamVector,
            seed: Optional[int],
            config: Optional[ModelConfig] = None,
            train_indices: Optional[Sequence[int]] = None,
            test_indices: Optional[Sequence[int]] = None
    ):
        self.trajectories: List[Trajectory] = list(trajectories)
        self.true_params: ParamVector = true_params
        self.seed: Optional[int] = seed
        self.config: ModelConfig = config if config is not None else ModelConfig(modes=true_params.m)
        if train_indices is None:
            train_indices = range(0, len(self.trajectories), 2)
        if test_indices is None:
            test_indices = range(1, len(self.trajectories), 2)
        self.train_indices: List[int] = list(train_indices)
        """Indices of the training split; by default the even indices."""
        self.test_indices: List[int] = list(test_indices)
        """Indices of the test split; by default the odd indices."""
        if set(self.train_indices) & set(self.test_indices):
            raise DataError("The train and test splits overlap")
        for index in self.train_indices + self.test_indices:
            if not 0 <= index < len(self.trajectories):
                raise DataError(f"Split index {index} is out of range", trajectory=index)

    @property
    def train(self) -> List[Trajectory]:
        return [self.trajectories[i] for i in self.train_indices]

    @property
    def test(self) -> List[Trajectory]:
        return [self.trajectories[i] for i in self.test_indices]

    def __len__(self):
        return len(self.trajectories)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'seed': self.seed,
            'true_params': self.true_params.to_dict(self.config),
            'split': {'train': self.train_indices, 'test': self.test_indices},
            'trajectories': [t.to_dict() for t in self.trajectories]
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'Dataset':
        if not isinstance(doc, dict) or 'true_params' not in doc or 'trajectories' not in doc:
            raise DataError("A dataset document needs 'true_params' and 'trajectories'")
        try:
            true_params, config = ParamVector.from_dict(doc['true_params'])
        except ConfigurationError as e:
            raise DataError(f"Malformed true parameters: {e!s}") from e
        trajectories = []
        for index, trajectory in enumerate(doc['trajectories']):
            try:
                trajectories.append(Trajectory.from_dict(trajectory))
            except DataError as e:
                raise e.with_context(trajectory=index) from e
        split = doc.get('split', {})
        return cls(trajectories, true_params, doc.get('seed', None), config, split.get('train', None),
                   split.get('test', None))

    def save(self, path: str):
        jsonmodule.save(self.to_dict(), path)

    @classmethod
    def load(cls, path: str) -> 'Dataset':
        return cls.from_dict(jsonmodule.load(path))

    def export_csv(self, directory: str, truth: bool = True) -> List[str]:
        """Writes ``trajectory_NNN_measurements.csv`` (and ``trajectory_NNN_truth.csv``) for every trajectory.

        Returns:
            List[str]: The paths written.

        """
        paths = []
        for index, trajectory in enumerate(self.trajectories):
            path = os.path.join(directory, f"trajectory_{index:03d}_measurements.csv")
            csvmodule.write_measurements(path, trajectory.measurements)
            paths.append(path)
            if truth:
                path = os.path.join(directory, f"trajectory_{index:03d}_truth.csv")
                csvmodule.write_truth(path, trajectory.states, trajectory.modes,
                                      trajectory.accelerations(self.config.tau))
                paths.append(path)
        return paths

    def __eq__(self, other):
        return isinstance(other, Dataset) and self.seed == other.seed and self.true_params == other.true_params \
            and self.config == other.config and self.trajectories == other.trajectories \
            and self.train_indices == other.train_indices and self.test_indices == other.test_indices


def generate_dataset(
        seed: int,
        trajectories: int = DEFAULT_TRAJECTORIES,
        length: int = DEFAULT_LENGTH,
        modes: int = 2,
        tau: float = 1.0,
        true_params: Optional[ParamVector] = None
) -> Dataset:
    """Generates a dataset.

    Args:
        seed: The dataset seed.
        trajectories: The number of trajectories.
        length: The number of steps of each trajectory.
        modes: The number of motion modes.
        tau: The time step in seconds.
        true_params: Use these parameters instead of sampling them.

    """
    if trajectories < 1:
        raise ConfigurationError(f"A dataset needs at least one trajectory, not {trajectories}", key='trajectories')
    config = ModelConfig(tau=tau, modes=modes)
    if true_params is None:
        true_params = sample_dataset_params(substream(seed), modes)
    elif true_params.m != modes:
        raise ConfigurationError(f"The parameters have {true_params.m} modes, not {modes}", key='m')
    log.info(f"Dataset {seed}: {trajectories} trajectories of {length} steps with true parameters {true_params}")
    generated = [
        generate_trajectory(true_params, length, substream(seed, index), config) for index in range(trajectories)
    ]
    return Dataset(generated, true_params, seed, config)


def sample_initial_params(seed: int, modes: int) -> ParamVector:
    """Draws the untrained starting parameters of a dataset, from the same intervals as the true parameters but from
    an independent stream."""
    return sample_dataset_params(substream(seed, INITIAL_PARAMS_STREAM), modes)
