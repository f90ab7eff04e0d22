"""Kalman filter steps and the interacting multiple model (IMM) recursion.

All quantities are :class:`immgrad.autodiff.DiffMatrix` and :class:`immgrad.autodiff.DiffScalar` objects, so the
derivatives of every estimate with respect to the trainable parameters are propagated alongside the estimate itself.
Every function also works on batches: a state mean of shape ``(B, 4, 1)`` filters ``B`` trajectories at once.

One IMM step (:func:`imm_step`) runs in this order:

#. mix the previous posterior states according to the transition matrix (:func:`imm_mix`);
#. predict every mixed state with its mode's motion model;
#. compute the moment-matched predicted measurement distribution (:func:`predicted_measurement_moments`), which is what
   the training loss scores;
#. update every mode with the new measurement, using the Joseph form of the covariance update; and
#. reweight the modes by their measurement likelihoods in log space.

"""

import logging
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .autodiff import DiffMatrix, DiffScalar, align_tangent, gaussian_log_pdf, logsumexp, solve_spd, weighted_sum
from .errors import ConfigurationError, DataError, DegenerateWeightError, FilterDivergenceError
from .models import FilterParameters, ImmModel, MeasurementModel, ModelConfig, MotionModel, ParamVector, STATE_DIM


log = logging.getLogger(__name__)

UNDERFLOW: float = 1e-300
"""Predicted mode weights below this are treated as having underflowed."""


class FilterOptions:
    """Options of the IMM recursion."""

    def __init__(self, *, weight_floor: float = 1e-12):
        """Initializes the options.

        Args:
            weight_floor: Predicted mode weights below this value are raised to it and the weights are renormalized.
                The clamp itself does not contribute to the gradient. Setting it to zero disables clamping, in which
                case underflowing weights raise :class:`immgrad.errors.DegenerateWeightError`.

        """
        if not 0.0 <= weight_floor < 1.0:
            raise ConfigurationError(f"The weight floor must lie in [0, 1), not {weight_floor!r}", key='weight_floor')
        self.weight_floor: float = weight_floor
        """The smallest predicted mode weight."""

    def __repr__(self):
        return f"{self.__class__.__name__}(weight_floor={self.weight_floor!r})"


class GaussianState:
    """A state estimate ``x`` with covariance ``P``."""

    def __init__(self, x: DiffMatrix, P: DiffMatrix):
        self.x: DiffMatrix = x
        """The state mean, ``(*batch, 4, 1)``."""
        self.P: DiffMatrix = P
        """The state covariance, ``(*batch, 4, 4)``."""

    def __repr__(self):
        return f"{self.__class__.__name__}(x={self.x.value.tolist()!r}, P={self.P.value.tolist()!r})"


class ImmBelief:
    """The mode-conditioned states of an IMM filter and the weight of each mode."""

    def __init__(self, modes: Sequence[GaussianState], weights: Sequence[DiffScalar]):
        if len(modes) != len(weights):
            raise ConfigurationError(f"{len(modes)} mode states but {len(weights)} weights")
        self.modes: List[GaussianState] = list(modes)
        self.weights: List[DiffScalar] = list(weights)

    @property
    def m(self) -> int:
        return len(self.modes)

    def weight_values(self) -> np.ndarray:
        """The mode weights as an array of shape ``(*batch, m)``."""
        batch = np.broadcast_shapes(*(w.value.shape for w in self.weights))
        return np.stack([np.broadcast_to(w.value, batch) for w in self.weights], axis=-1)


class MeasPrediction:
    """The moment-matched predicted measurement distribution ``N(ẑ, Ŝ)`` of one step."""

    def __init__(self, z_hat: DiffMatrix, S_hat: DiffMatrix):
        self.z_hat: DiffMatrix = z_hat
        self.S_hat: DiffMatrix = S_hat

    def log_likelihood(self, z: np.ndarray) -> DiffScalar:
        """The log density of measurement :obj:`z` under this prediction."""
        return gaussian_log_pdf(z, self.z_hat, self.S_hat)


class StepRecord:
    """Everything computed in one :func:`imm_step`."""

    def __init__(
            self,
            predicted: ImmBelief,
            posterior: ImmBelief,
            per_mode_loglik: Sequence[DiffScalar],
            normalizer_log: DiffScalar,
            meas_prediction: MeasPrediction,
            clamped: bool = False
    ):
        self.predicted: ImmBelief = predicted
        """The predicted belief: the mixed states propagated by their motion models, with the predicted weights."""
        self.posterior: ImmBelief = posterior
        self.per_mode_loglik: List[DiffScalar] = list(per_mode_loglik)
        """The log-likelihood of the measurement under each mode's predicted measurement distribution."""
        self.normalizer_log: DiffScalar = normalizer_log
        """``log c`` where ``c = Σ_j Λ^j w^j_{t|t−1}``."""
        self.meas_prediction: MeasPrediction = meas_prediction
        self.clamped: bool = clamped
        """Whether a predicted mode weight had to be raised to the weight floor."""


class MixedBelief:
    """The result of :func:`imm_mix`; unpacks as ``mixed_states, predicted_weights``."""

    def __init__(self, states: Sequence[GaussianState], predicted_weights: Sequence[DiffScalar], clamped: bool):
        self.states: List[GaussianState] = list(states)
        self.predicted_weights: List[DiffScalar] = list(predicted_weights)
        self.clamped: bool = clamped

    def __iter__(self):
        yield self.states
        yield self.predicted_weights


def _column(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return z[..., None]


def _spread(mean: DiffMatrix, other: DiffMatrix) -> DiffMatrix:
    difference = other - mean
    return difference @ difference.T


def _where(mask: np.ndarray, a: DiffScalar, b: DiffScalar) -> DiffScalar:
    ndim = max(np.ndim(mask), a.value.ndim, b.value.ndim)
    value = np.where(mask, a.value, b.value)
    tangent = np.where(mask, align_tangent(a.tangent, a.value.ndim, ndim), align_tangent(b.tangent, b.value.ndim, ndim))
    return DiffScalar(value, tangent)


def kf_predict(state: GaussianState, F: DiffMatrix, Q: DiffMatrix) -> GaussianState:
    """The linear Kalman filter prediction ``x ← F x``, ``P ← F P Fᵀ + Q``."""
    return GaussianState(F @ state.x, (F @ state.P @ F.T + Q).symmetrize())


def ekf_predict(state: GaussianState, model: MotionModel) -> GaussianState:
    """The extended Kalman filter prediction, linearizing :obj:`model` at the current mean."""
    F = model.jacobian(state.x)
    return GaussianState(model.predict(state.x), (F @ state.P @ F.T + model.covariance).symmetrize())


def _update(state: GaussianState, z: np.ndarray, z_pred: DiffMatrix, H: DiffMatrix, R: DiffMatrix) \
        -> Tuple[GaussianState, DiffScalar]:
    z = _column(z)
    S = (H @ state.P @ H.T + R).symmetrize()
    # K = P Hᵀ S⁻¹ = (S⁻¹ H P)ᵀ since P and S are symmetric
    K = solve_spd(S, H @ state.P).T
    x = state.x + K @ (z - z_pred)
    residual = DiffMatrix.identity(state.P.rows, state.P.dimension) - K @ H
    P = (residual @ state.P @ residual.T + K @ R @ K.T).symmetrize()
    return GaussianState(x, P), gaussian_log_pdf(z, z_pred, S)


def kf_update(state: GaussianState, z: np.ndarray, H: DiffMatrix, R: DiffMatrix) -> Tuple[GaussianState, DiffScalar]:
    """The Kalman filter update with the Joseph form of the covariance update.

    Args:
        state: The predicted state.
        z: The measurement, of shape ``(*batch, 2)``.
        H: The measurement matrix.
        R: The measurement noise covariance.

    Returns:
        Tuple[GaussianState, DiffScalar]: The posterior state, and the log-likelihood ``log N(z; H x, S)`` of the
        measurement under the predicted state.

    Raises:
        FilterDivergenceError: If the innovation covariance ``S = H P Hᵀ + R`` is not positive definite.

    """
    return _update(state, z, H @ state.x, H, R)


def ekf_update(state: GaussianState, z: np.ndarray, model: MeasurementModel) -> Tuple[GaussianState, DiffScalar]:
    """Like :func:`kf_update`, but linearizing :obj:`model` at the predicted mean."""
    return _update(state, z, model.measure(state.x), model.jacobian(state.x), model.covariance)


def imm_mix(belief: ImmBelief, transition, options: Optional[FilterOptions] = None) -> MixedBelief:
    """Mixes the mode-conditioned states of a belief.

    The predicted weight of mode ``j`` is ``c_j = Σ_i p^{ij} w^i``; mode ``j`` then starts from the mixture of all
    states with mixing weights ``w^{i|j} = p^{ij} w^i / c_j``, moment-matched into one Gaussian.

    Predicted weights below :attr:`FilterOptions.weight_floor` are clamped to the floor and all predicted weights are
    renormalized. A mode whose predicted weight has underflowed entirely keeps its own state.

    Args:
        belief: The posterior belief of the previous step.
        transition: The :class:`immgrad.models.TransitionMatrix`.
        options: The filter options.

    Returns:
        MixedBelief: The mixed states and the predicted weights.

    Raises:
        DegenerateWeightError: If a predicted weight is not finite, or if it underflows while clamping is disabled.

    """
    if options is None:
        options = FilterOptions()
    m = belief.m
    if transition.m != m:
        raise ConfigurationError(f"The transition matrix is {transition.m}×{transition.m} but the belief has {m} modes")
    numerators = [[transition[i, j] * belief.weights[i] for i in range(m)] for j in range(m)]
    predicted = [sum(column[1:], column[0]) for column in numerators]

    for j, c in enumerate(predicted):
        if not np.all(np.isfinite(c.value)):
            raise DegenerateWeightError("A predicted mode weight is not finite", mode=j)
        if options.weight_floor <= 0.0 and np.any(c.value < UNDERFLOW):
            raise DegenerateWeightError("A predicted mode weight underflowed", mode=j)

    clamped = False
    floored = []
    for c in predicted:
        below = c.value < options.weight_floor
        if np.any(below):
            clamped = True
            c = DiffScalar(np.maximum(c.value, options.weight_floor), c.tangent)
        floored.append(c)
    if clamped:
        total = sum(floored[1:], floored[0])
        floored = [c / total for c in floored]

    states = []
    for j in range(m):
        c = predicted[j]
        usable = c.value > UNDERFLOW
        denominator = _where(usable, c, c * 0.0 + 1.0)
        mixing = []
        for i in range(m):
            own = c * 0.0 + (1.0 if i == j else 0.0)
            mixing.append(_where(usable, numerators[j][i] / denominator, own))
        mean = weighted_sum(mixing, (s.x for s in belief.modes))
        covariance = weighted_sum(mixing, (s.P + _spread(mean, s.x) for s in belief.modes)).symmetrize()
        states.append(GaussianState(mean, covariance))
    return MixedBelief(states, floored, clamped)


def predicted_measurement_moments(
        states: Sequence[GaussianState],
        weights: Sequence[DiffScalar],
        measurement: MeasurementModel
) -> MeasPrediction:
    """Moment-matches the predicted measurement distributions of all modes into a single Gaussian.

    ``ẑ = h(x̂)`` with ``x̂ = Σ w^i x^i``, and ``Ŝ = Σ w^i (S^i + ν^i ν^iᵀ)`` where ``ν^i = h(x^i) − ẑ`` and
    ``S^i = H P^i Hᵀ + R``.

    """
    x_hat = weighted_sum(weights, (s.x for s in states))
    z_hat = measurement.measure(x_hat)
    terms = []
    for state in states:
        H = measurement.jacobian(state.x)
        S = H @ state.P @ H.T + measurement.covariance
        terms.append(S + _spread(z_hat, measurement.measure(state.x)))
    return MeasPrediction(z_hat, weighted_sum(weights, terms).symmetrize())


def imm_combine(belief: ImmBelief) -> GaussianState:
    """Condenses a belief into a single moment-matched Gaussian."""
    mean = weighted_sum(belief.weights, (s.x for s in belief.modes))
    covariance = weighted_sum(belief.weights, (s.P + _spread(mean, s.x) for s in belief.modes))
    return GaussianState(mean, covariance.symmetrize())


def imm_step(belief: ImmBelief, z: np.ndarray, model: ImmModel, options: Optional[FilterOptions] = None) \
        -> StepRecord:
    """Runs one full IMM recursion step.

    Args:
        belief: The posterior belief of the previous step.
        z: The new measurement, ``(*batch, 2)``.
        model: The per-mode motion models, the transition matrix, and the measurement model.
        options: The filter options.

    Returns:
        StepRecord: The predicted and posterior beliefs, the mode likelihoods, and the predicted measurement
        distribution (computed before the update, from the predicted belief).

    Raises:
        FilterDivergenceError: If a covariance loses positive definiteness.
        DegenerateWeightError: If the mode weights degenerate, for example because the measurement has zero
            likelihood under every mode.

    """
    mixed = imm_mix(belief, model.transition, options)
    predicted_states = [ekf_predict(state, motion) for state, motion in zip(mixed.states, model.motion)]
    predicted = ImmBelief(predicted_states, mixed.predicted_weights)
    meas_prediction = predicted_measurement_moments(predicted_states, mixed.predicted_weights, model.measurement)

    posterior_states = []
    logliks = []
    for state in predicted_states:
        updated, loglik = ekf_update(state, z, model.measurement)
        posterior_states.append(updated)
        logliks.append(loglik)

    log_weights = [loglik + weight.log() for loglik, weight in zip(logliks, mixed.predicted_weights)]
    normalizer = logsumexp(log_weights)
    if not np.all(np.isfinite(normalizer.value)):
        best = int(np.argmax([np.max(lw.value) for lw in log_weights]))
        raise DegenerateWeightError("The measurement has no finite likelihood under any mode", mode=best)
    weights = [(lw - normalizer).exp() for lw in log_weights]
    return StepRecord(
        predicted=predicted,
        posterior=ImmBelief(posterior_states, weights),
        per_mode_loglik=logliks,
        normalizer_log=normalizer,
        meas_prediction=meas_prediction,
        clamped=mixed.clamped
    )


def initial_covariance(tau: float) -> np.ndarray:
    """The two-point differencing covariance for ``σ_r = 1``: per axis ``[[1, 1/τ], [1/τ, 2/τ²]]``."""
    block = np.array([
        [1.0, 1.0 / tau],
        [1.0 / tau, 2.0 / tau ** 2]
    ])
    P = np.zeros((STATE_DIM, STATE_DIM))
    P[0:2, 0:2] = block
    P[2:4, 2:4] = block
    return P


def init_belief(z0: np.ndarray, z1: np.ndarray, params: Union[FilterParameters, ParamVector],
                config: ModelConfig) -> ImmBelief:
    """Initializes every mode from the first two measurements by two-point differencing.

    Every mode starts at position ``z1`` with velocity ``(z1 − z0) / τ``, and the mode weights are uniform. The
    covariance is the one implied by two independent position measurements with noise ``σ_r``: position variance
    ``σ_r²``, velocity variance ``2σ_r²/τ²``, and cross term ``σ_r²/τ``, on each axis.

    Raises:
        ConfigurationError: If ``τ`` is zero.

    """
    if isinstance(params, ParamVector):
        params = FilterParameters.constant(params)
    return _two_point_belief(z0, z1, params.sigma_r, params.m, config)


def _two_point_belief(z0: np.ndarray, z1: np.ndarray, sigma_r: DiffScalar, m: int, config: ModelConfig) -> ImmBelief:
    if config.tau <= 0.0:
        raise ConfigurationError("Two-point initialization needs a positive time step", key='tau')
    dimension = sigma_r.dimension
    z0 = np.asarray(z0, dtype=float)
    z1 = np.asarray(z1, dtype=float)
    velocity = (z1 - z0) / config.tau
    x = np.stack([z1[..., 0], velocity[..., 0], z1[..., 1], velocity[..., 1]], axis=-1)[..., None]
    mean = DiffMatrix.constant(x, dimension)
    covariance = DiffMatrix.constant(initial_covariance(config.tau), dimension).scale(sigma_r.square()).symmetrize()
    weight = DiffScalar(np.full(x.shape[:-2], 1.0 / m), np.zeros((dimension,) + x.shape[:-2]))
    return ImmBelief([GaussianState(mean, covariance) for _ in range(m)], [weight] * m)


class ImmFilter:
    """Runs an IMM filter over whole measurement sequences."""

    FIRST_STEP: int = 2
    """The first time step that is filtered; the first two measurements initialize the filter."""

    def __init__(self, model: ImmModel, options: Optional[FilterOptions] = None):
        self.model: ImmModel = model
        self.options: FilterOptions = options if options is not None else FilterOptions()
        self._reported_clamp: bool = False

    def steps(self, measurements: np.ndarray) -> Iterator[Tuple[int, StepRecord]]:
        """Filters a measurement sequence (or a batch of equally long sequences).

        Args:
            measurements: ``(T, 2)`` or ``(B, T, 2)``.

        Yields:
            Tuple[int, StepRecord]: The time step ``t ≥ 2`` and its record.

        Raises:
            DataError: If the sequences have fewer than two measurements.
            FilterDivergenceError: With the failing :attr:`step` set.
            DegenerateWeightError: With the failing :attr:`step` set.

        """
        measurements = np.asarray(measurements, dtype=float)
        if measurements.ndim < 2 or measurements.shape[-1] != 2:
            raise DataError(f"Measurements must have shape (..., T, 2), not {measurements.shape}")
        length = measurements.shape[-2]
        if length < 2:
            raise DataError(f"At least two measurements are needed to initialize the filter, but got {length}")
        if self.model.sigma_r is None:
            raise ConfigurationError("The model does not define σ_r, which initialization needs", key='sigma_r')
        belief = _two_point_belief(measurements[..., 0, :], measurements[..., 1, :], self.model.sigma_r, self.model.m,
                                   self.model.config)
        for t in range(self.FIRST_STEP, length):
            try:
                record = imm_step(belief, measurements[..., t, :], self.model, self.options)
            except (FilterDivergenceError, DegenerateWeightError) as e:
                raise e.with_context(step=t) from e
            if record.clamped and not self._reported_clamp:
                log.debug(f"Clamped a predicted mode weight to {self.options.weight_floor} at step {t}")
                self._reported_clamp = True
            belief = record.posterior
            yield t, record

    def run(self, measurements: np.ndarray) -> List[StepRecord]:
        """Like :meth:`ImmFilter.steps`, but returns all records."""
        return [record for _, record in self.steps(measurements)]
