"""Motion and measurement models, and the parameters that configure them.

The tracked state is ``(px, vx, py, vy)`` in meters and meters per second. Targets follow a two-dimensional discretized
white noise acceleration (DWNA) model with one process noise level per motion mode, and a sensor reports noisy
positions.

There are three representations of the filter parameters:

* :class:`ParamVector` holds the constrained parameters ``σ_v`` (one per mode), ``p_stay`` (one per mode), and ``σ_r``;
* :class:`UnconstrainedParams` holds ``log σ`` and ``logit p``, the space in which gradient steps are taken; and
* :class:`FilterParameters` holds differentiable :class:`immgrad.autodiff.DiffScalar` versions of the constrained
  parameters, whose tangents are derivatives with respect to the unconstrained coordinates.

"""

import logging
import math
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit, logit
from typing_extensions import Protocol

from .autodiff import DiffMatrix, DiffScalar, TangentSpace
from .errors import ConfigurationError, ShapeError


log = logging.getLogger(__name__)

STATE_DIM: int = 4
"""The dimension of the state ``(px, vx, py, vy)``."""

MEAS_DIM: int = 2
"""The dimension of a measurement ``(zx, zy)``."""

# Largest and smallest probabilities strictly inside (0, 1)
P_MAX: float = float(np.nextafter(1.0, 0.0))
P_MIN: float = float(np.finfo(float).tiny)
SIGMA_MIN: float = float(np.finfo(float).tiny)


class ModelConfig:
    """Structural options of the models that are not trained."""

    def __init__(self, *, tau: float = 1.0, modes: int = 2):
        """Initializes the configuration.

        Args:
            tau: The time step in seconds.
            modes: The number of motion modes, ``m``.

        Raises:
            ConfigurationError: If :obj:`tau` is negative or not finite, or :obj:`modes` is less than one.

        """
        if not math.isfinite(tau) or tau < 0:
            raise ConfigurationError(f"The time step must be a non-negative number of seconds, not {tau!r}", key='tau')
        if int(modes) != modes or modes < 1:
            raise ConfigurationError(f"The number of modes must be a positive integer, not {modes!r}", key='m')
        self.tau: float = float(tau)
        """The time step, in seconds."""
        self.modes: int = int(modes)
        """The number of motion modes."""

    @property
    def m(self) -> int:
        return self.modes

    state_dim = STATE_DIM
    meas_dim = MEAS_DIM

    def __eq__(self, other):
        return isinstance(other, ModelConfig) and self.tau == other.tau and self.modes == other.modes

    def __hash__(self):
        return hash((self.tau, self.modes))

    def __repr__(self):
        return f"{self.__class__.__name__}(tau={self.tau!r}, modes={self.modes!r})"


def coordinate_names(modes: int) -> Tuple[str, ...]:
    """Returns the names of the trainable coordinates for a model with :obj:`modes` modes, in slot order.

    With two modes these are ``sigma_v0, sigma_v1, p00, p11, sigma_r``. A single-mode model has no transition
    probabilities to train, so its coordinates are ``sigma_v0, sigma_r``.

    """
    names = [f"sigma_v{i}" for i in range(modes)]
    if modes > 1:
        names.extend(f"p{i}{i}" for i in range(modes))
    names.append('sigma_r')
    return tuple(names)


class ParamVector:
    """The constrained filter parameters ``θ = {σ_v⁰, …, p⁰⁰, …, σ_r}``."""

    def __init__(self, sigma_v: Sequence[float], p_stay: Optional[Sequence[float]], sigma_r: float):
        """Initializes and validates a parameter vector.

        Args:
            sigma_v: The process noise standard deviation of each mode.
            p_stay: The probability of each mode to persist for another step. For a single mode this must be ``[1.0]``
                or :const:`None`.
            sigma_r: The standard deviation of the measurement noise, in meters.

        Raises:
            ConfigurationError: If any parameter is out of range or not finite.

        """
        sigma_v = tuple(float(s) for s in sigma_v)
        modes = len(sigma_v)
        if modes < 1:
            raise ConfigurationError("There must be at least one motion mode", key='sigma_v')
        if p_stay is None and modes == 1:
            p_stay = (1.0,)
        elif p_stay is None:
            raise ConfigurationError(f"{modes} modes need {modes} transition probabilities", key='p_stay')
        p_stay = tuple(float(p) for p in p_stay)
        if len(p_stay) != modes:
            raise ConfigurationError(f"Expected {modes} transition probabilities but got {len(p_stay)}", key='p_stay')
        for i, s in enumerate(sigma_v):
            if not math.isfinite(s) or s < 0:
                raise ConfigurationError(f"σ_v of mode {i} must be non-negative and finite, not {s!r}",
                                         key=f'sigma_v{i}')
        if modes == 1:
            if p_stay != (1.0,):
                raise ConfigurationError(
                    f"A single-mode model has a fixed transition probability of 1, not {p_stay[0]}", key='p_stay'
                )
        else:
            for i, p in enumerate(p_stay):
                if not 0.0 < p < 1.0:
                    raise ConfigurationError(f"p{i}{i} must lie strictly inside (0, 1), not {p!r}", key=f'p{i}{i}')
        sigma_r = float(sigma_r)
        if not math.isfinite(sigma_r) or sigma_r < 0:
            raise ConfigurationError(f"σ_r must be non-negative and finite, not {sigma_r!r}", key='sigma_r')
        self.sigma_v: Tuple[float, ...] = sigma_v
        """The process noise standard deviation of each mode, in m/s²."""
        self.p_stay: Tuple[float, ...] = p_stay
        """The diagonal of the mode transition matrix, ``p^{ii}``."""
        self.sigma_r: float = sigma_r
        """The measurement noise standard deviation, in meters."""

    @property
    def m(self) -> int:
        """The number of modes."""
        return len(self.sigma_v)

    @property
    def dimension(self) -> int:
        """The number of trainable coordinates."""
        return len(coordinate_names(self.m))

    def coordinate_names(self) -> Tuple[str, ...]:
        return coordinate_names(self.m)

    def coordinates(self) -> Iterator[Tuple[str, float]]:
        """Yields ``(name, value)`` for every trainable coordinate in slot order."""
        yield from zip(self.coordinate_names(), self.as_array())

    def as_array(self) -> np.ndarray:
        values = list(self.sigma_v)
        if self.m > 1:
            values.extend(self.p_stay)
        values.append(self.sigma_r)
        return np.array(values, dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float], modes: int) -> 'ParamVector':
        values = [float(v) for v in values]
        expected = len(coordinate_names(modes))
        if len(values) != expected:
            raise ShapeError(f"Expected {expected} coordinates for {modes} modes", left=expected, right=len(values))
        if modes == 1:
            return cls(values[:1], None, values[1])
        return cls(values[:modes], values[modes:2 * modes], values[-1])

    def __getitem__(self, name: str) -> float:
        """Returns the coordinate called :obj:`name`, *e.g.*, ``theta['p11']``."""
        names = self.coordinate_names()
        if name not in names:
            raise ConfigurationError(f"Unknown parameter {name!r}; valid names are {', '.join(names)}", key=name)
        return float(self.as_array()[names.index(name)])

    def replace(self, name: str, value: float) -> 'ParamVector':
        """Returns a copy of this parameter vector with the coordinate :obj:`name` set to :obj:`value`."""
        names = self.coordinate_names()
        if name not in names:
            raise ConfigurationError(f"Unknown parameter {name!r}; valid names are {', '.join(names)}", key=name)
        values = self.as_array()
        values[names.index(name)] = value
        return ParamVector.from_array(values, self.m)

    def to_dict(self, config: Optional[ModelConfig] = None) -> Dict[str, Any]:
        """Returns the JSON document form of these parameters, ``{sigma_v, p_stay, sigma_r, tau, m}``."""
        if config is None:
            config = ModelConfig(modes=self.m)
        return {
            'sigma_v': list(self.sigma_v),
            'p_stay': list(self.p_stay),
            'sigma_r': self.sigma_r,
            'tau': config.tau,
            'm': self.m
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> Tuple['ParamVector', ModelConfig]:
        """Parses the document produced by :meth:`ParamVector.to_dict`.

        Raises:
            ConfigurationError: If a key is missing or a value is invalid.

        """
        if not isinstance(doc, dict):
            raise ConfigurationError(f"A parameter document must be a mapping, not {type(doc).__name__}")
        for key in ('sigma_v', 'sigma_r'):
            if key not in doc:
                raise ConfigurationError(f"Parameter document is missing {key!r}", key=key)
        sigma_v = doc['sigma_v']
        if not isinstance(sigma_v, (list, tuple)):
            sigma_v = [sigma_v]
        params = cls(sigma_v, doc.get('p_stay', None), doc['sigma_r'])
        m = doc.get('m', params.m)
        if m != params.m:
            raise ConfigurationError(f"The document declares m={m} but lists {params.m} modes", key='m')
        return params, ModelConfig(tau=doc.get('tau', 1.0), modes=params.m)

    def __eq__(self, other):
        return isinstance(other, ParamVector) and self.sigma_v == other.sigma_v and self.p_stay == other.p_stay \
            and self.sigma_r == other.sigma_r

    def __hash__(self):
        return hash((self.sigma_v, self.p_stay, self.sigma_r))

    def __repr__(self):
        return f"{self.__class__.__name__}(sigma_v={list(self.sigma_v)!r}, p_stay={list(self.p_stay)!r}, " \
               f"sigma_r={self.sigma_r!r})"

    def __str__(self):
        return ', '.join(f"{name}={value:.6g}" for name, value in self.coordinates())


class UnconstrainedParams:
    """The optimization variables: ``ρ_v = log σ_v``, ``λ = logit p^{ii}``, and ``ρ_r = log σ_r``."""

    def __init__(self, rho_v: Sequence[float], lambda_p: Sequence[float], rho_r: float):
        self.rho_v: np.ndarray = np.array(rho_v, dtype=float)
        self.lambda_p: np.ndarray = np.array(lambda_p, dtype=float)
        """Logits of the diagonal transition probabilities; empty for a single mode."""
        self.rho_r: float = float(rho_r)

    @property
    def m(self) -> int:
        return len(self.rho_v)

    def as_vector(self) -> np.ndarray:
        """Returns the coordinates in slot order (see :func:`coordinate_names`)."""
        return np.concatenate([self.rho_v, self.lambda_p, [self.rho_r]])

    @classmethod
    def from_vector(cls, vector: Sequence[float], modes: int) -> 'UnconstrainedParams':
        vector = np.asarray(vector, dtype=float)
        expected = len(coordinate_names(modes))
        if vector.shape != (expected,):
            raise ShapeError(f"Expected {expected} unconstrained coordinates", left=expected, right=vector.shape)
        n_p = modes if modes > 1 else 0
        return cls(vector[:modes], vector[modes:modes + n_p], vector[-1])

    def __eq__(self, other):
        return isinstance(other, UnconstrainedParams) and np.array_equal(self.as_vector(), other.as_vector())

    def __repr__(self):
        return f"{self.__class__.__name__}(rho_v={self.rho_v.tolist()!r}, lambda_p={self.lambda_p.tolist()!r}, " \
               f"rho_r={self.rho_r!r})"


def to_unconstrained(theta: ParamVector) -> UnconstrainedParams:
    """Maps constrained parameters to the optimization space.

    Raises:
        ConfigurationError: If a standard deviation is zero, since its logarithm is not finite.

    """
    with np.errstate(divide='ignore'):
        rho_v = np.log(np.array(theta.sigma_v))
        rho_r = float(np.log(theta.sigma_r))
    lambda_p = logit(np.array(theta.p_stay)) if theta.m > 1 else np.zeros(0)
    unconstrained = UnconstrainedParams(rho_v, lambda_p, rho_r)
    if not np.all(np.isfinite(unconstrained.as_vector())):
        raise ConfigurationError(f"Parameters {theta} have no finite unconstrained representation")
    return unconstrained


def to_constrained(u: UnconstrainedParams) -> ParamVector:
    """Maps optimization variables back to constrained parameters.

    The result always satisfies the :class:`ParamVector` invariants: standard deviations are strictly positive and
    transition probabilities lie strictly inside (0, 1), even where ``exp`` or the logistic function would saturate.

    Raises:
        ConfigurationError: If any coordinate is not finite.

    """
    vector = u.as_vector()
    if not np.all(np.isfinite(vector)):
        raise ConfigurationError(f"Unconstrained parameters must be finite: {vector.tolist()!r}")
    sigma_v = np.clip(np.exp(u.rho_v), SIGMA_MIN, None)
    sigma_r = max(math.exp(u.rho_r), SIGMA_MIN)
    if u.m > 1:
        p_stay = np.clip(expit(u.lambda_p), P_MIN, P_MAX)
    else:
        p_stay = None
    return ParamVector(sigma_v, p_stay, sigma_r)


class FilterParameters:
    """Differentiable filter parameters for one computation."""

    def __init__(self, space: TangentSpace, sigma_v: Sequence[DiffScalar], p_stay: Sequence[DiffScalar],
                 sigma_r: DiffScalar):
        self.space: TangentSpace = space
        self.sigma_v: List[DiffScalar] = list(sigma_v)
        self.p_stay: List[DiffScalar] = list(p_stay)
        self.sigma_r: DiffScalar = sigma_r

    @property
    def m(self) -> int:
        return len(self.sigma_v)

    @property
    def dimension(self) -> int:
        return self.space.dimension

    @classmethod
    def lift(cls, u: UnconstrainedParams, trainable: Optional[Sequence[bool]] = None) -> 'FilterParameters':
        """Lifts unconstrained parameters into a tangent space with one slot per coordinate.

        Args:
            u: The unconstrained parameters.
            trainable: Which coordinates (in slot order) are trainable. Frozen coordinates are lifted as constants and
                keep their slot, so that the tangent dimension does not depend on the freeze mask. Defaults to all
                coordinates being trainable.

        """
        vector = u.as_vector()
        if trainable is None:
            trainable = [True] * len(vector)
        elif len(trainable) != len(vector):
            raise ShapeError("The freeze mask does not match the number of coordinates", left=len(vector),
                             right=len(trainable))
        space = TangentSpace(len(vector))
        lifted = [
            space.lift_parameter(value, slot) if train else space.lift_constant(value)
            for slot, (value, train) in enumerate(zip(vector, trainable))
        ]
        m = u.m
        sigma_v = [rho.exp() for rho in lifted[:m]]
        if m > 1:
            p_stay = [lam.sigmoid() for lam in lifted[m:2 * m]]
        else:
            p_stay = [space.lift_constant(1.0)]
        return cls(space, sigma_v, p_stay, lifted[-1].exp())

    @classmethod
    def constant(cls, theta: ParamVector) -> 'FilterParameters':
        """Lifts constrained parameters into a zero-dimensional tangent space, for filtering without gradients."""
        space = TangentSpace(0)
        return cls(
            space,
            [space.lift_constant(s) for s in theta.sigma_v],
            [space.lift_constant(p) for p in theta.p_stay],
            space.lift_constant(theta.sigma_r)
        )

    def values(self) -> ParamVector:
        """The constrained values of these parameters."""
        return ParamVector(
            [float(s.value) for s in self.sigma_v],
            [float(p.value) for p in self.p_stay],
            float(self.sigma_r.value)
        )


def dwna_block(tau: float) -> np.ndarray:
    """The per-axis DWNA process noise block for unit noise, ``[[τ³/3, τ²/2], [τ²/2, τ]]``."""
    return np.array([
        [tau ** 3 / 3.0, tau ** 2 / 2.0],
        [tau ** 2 / 2.0, tau]
    ])


def unit_process_noise(config: ModelConfig) -> np.ndarray:
    """The 4×4 process noise covariance for ``σ_v = 1``."""
    q = np.zeros((STATE_DIM, STATE_DIM))
    block = dwna_block(config.tau)
    q[0:2, 0:2] = block
    q[2:4, 2:4] = block
    return q


def transition_model(config: ModelConfig) -> np.ndarray:
    f = np.eye(STATE_DIM)
    f[0, 1] = config.tau
    f[2, 3] = config.tau
    return f


def selector() -> np.ndarray:
    h = np.zeros((MEAS_DIM, STATE_DIM))
    h[0, 0] = 1.0
    h[1, 2] = 1.0
    return h


def build_F(config: ModelConfig, dimension: int = 0) -> DiffMatrix:
    """The constant-velocity transition matrix, ``[[1, τ], [0, 1]]`` per axis."""
    return DiffMatrix.constant(transition_model(config), dimension)


def build_Q(sigma_v: DiffScalar, config: ModelConfig) -> DiffMatrix:
    """The DWNA process noise covariance ``σ_v² · blockdiag(B, B)`` with ``B = [[τ³/3, τ²/2], [τ²/2, τ]]``."""
    return DiffMatrix.constant(unit_process_noise(config), sigma_v.dimension).scale(sigma_v.square()).symmetrize()


def build_H(config: ModelConfig, dimension: int = 0) -> DiffMatrix:
    """The position selector, with rows ``(1, 0, 0, 0)`` and ``(0, 0, 1, 0)``."""
    return DiffMatrix.constant(selector(), dimension)


def build_R(sigma_r: DiffScalar) -> DiffMatrix:
    """The measurement noise covariance ``σ_r² · I``."""
    return DiffMatrix.identity(MEAS_DIM, sigma_r.dimension).scale(sigma_r.square()).symmetrize()


class TransitionMatrix:
    """The mode transition matrix ``Π``, where entry ``(i, j)`` is the probability of switching from mode ``i`` to
    mode ``j`` in one step."""

    def __init__(self, p: DiffMatrix):
        if p.rows != p.cols:
            raise ShapeError("A transition matrix must be square", left=p.rows, right=p.cols)
        self.p: DiffMatrix = p

    @property
    def m(self) -> int:
        return self.p.rows

    def __getitem__(self, index: Tuple[int, int]) -> DiffScalar:
        return self.p[index]

    def row_sums(self) -> np.ndarray:
        return np.sum(self.p.value, axis=-1)

    @property
    def value(self) -> np.ndarray:
        return self.p.value


def build_transition_matrix(p_stay: Sequence[DiffScalar], m: int, dimension: Optional[int] = None) \
        -> TransitionMatrix:
    """Builds the transition matrix from its diagonal.

    The probability ``1 − p^{ii}`` of leaving mode ``i`` is split evenly over the other ``m − 1`` modes. A single mode
    always transitions to itself.

    Args:
        p_stay: The diagonal entries ``p^{ii}``.
        m: The number of modes.
        dimension: The tangent dimension; only needed if :obj:`p_stay` is empty.

    """
    if dimension is None:
        if not p_stay:
            raise ConfigurationError("The tangent dimension is needed when no transition probabilities are given")
        dimension = p_stay[0].dimension
    if m == 1:
        return TransitionMatrix(DiffMatrix.constant(np.ones((1, 1)), dimension))
    if len(p_stay) != m:
        raise ConfigurationError(f"Expected {m} transition probabilities but got {len(p_stay)}", key='p_stay')
    rows = []
    for i in range(m):
        leave = (1.0 - p_stay[i]) / float(m - 1)
        rows.append([p_stay[i] if i == j else leave for j in range(m)])
    return TransitionMatrix(DiffMatrix.from_scalars(rows))


class MotionModel(Protocol):
    """The interface of a mode-conditioned motion model ``x_t = f(x_{t−1}) + u``, ``u ~ N(0, Q)``."""

    covariance: DiffMatrix

    def predict(self, x: DiffMatrix) -> DiffMatrix:
        """Evaluates ``f(x)``."""
        ...

    def jacobian(self, x: DiffMatrix) -> DiffMatrix:
        """Evaluates ``∂f/∂x`` at :obj:`x`."""
        ...


class MeasurementModel(Protocol):
    """The interface of a measurement model ``z_t = h(x_t) + v``, ``v ~ N(0, R)``."""

    covariance: DiffMatrix

    def measure(self, x: DiffMatrix) -> DiffMatrix:
        """Evaluates ``h(x)``."""
        ...

    def jacobian(self, x: DiffMatrix) -> DiffMatrix:
        """Evaluates ``∂h/∂x`` at :obj:`x`."""
        ...


class ConstantVelocityModel:
    """The linear DWNA motion model of one mode."""

    def __init__(self, sigma_v: DiffScalar, config: ModelConfig):
        self.config: ModelConfig = config
        self.F: DiffMatrix = build_F(config, sigma_v.dimension)
        self.covariance: DiffMatrix = build_Q(sigma_v, config)

    def predict(self, x: DiffMatrix) -> DiffMatrix:
        return self.F @ x

    def jacobian(self, x: DiffMatrix) -> DiffMatrix:
        return self.F


class PositionMeasurementModel:
    """The linear position sensor."""

    def __init__(self, sigma_r: DiffScalar, config: ModelConfig):
        self.config: ModelConfig = config
        self.H: DiffMatrix = build_H(config, sigma_r.dimension)
        self.covariance: DiffMatrix = build_R(sigma_r)

    def measure(self, x: DiffMatrix) -> DiffMatrix:
        return self.H @ x

    def jacobian(self, x: DiffMatrix) -> DiffMatrix:
        return self.H


class ImmModel:
    """Everything an IMM filter needs for one parametrization: one motion model per mode, the transition matrix, and
    the measurement model."""

    def __init__(self, motion: Sequence[MotionModel], transition: TransitionMatrix, measurement: MeasurementModel,
                 config: ModelConfig, sigma_r: Optional[DiffScalar] = None):
        if len(motion) != transition.m:
            raise ShapeError("One motion model is needed per mode", left=len(motion), right=transition.m)
        self.motion: List[MotionModel] = list(motion)
        self.transition: TransitionMatrix = transition
        self.measurement: MeasurementModel = measurement
        self.config: ModelConfig = config
        self.sigma_r: Optional[DiffScalar] = sigma_r
        """The measurement noise level; it also sets the initial covariance of :func:`immgrad.filters.init_belief`."""

    @property
    def m(self) -> int:
        return len(self.motion)

    @property
    def dimension(self) -> int:
        return self.transition.p.dimension

    @classmethod
    def build(cls, params: Union[FilterParameters, ParamVector], config: ModelConfig) -> 'ImmModel':
        """Builds the linear models of the tracking experiments."""
        if isinstance(params, ParamVector):
            params = FilterParameters.constant(params)
        if params.m != config.modes:
            raise ConfigurationError(f"The parameters have {params.m} modes but the model configuration has "
                                     f"{config.modes}", key='m')
        return cls(
            motion=[ConstantVelocityModel(s, config) for s in params.sigma_v],
            transition=build_transition_matrix(params.p_stay, params.m, params.dimension),
            measurement=PositionMeasurementModel(params.sigma_r, config),
            config=config,
            sigma_r=params.sigma_r
        )
