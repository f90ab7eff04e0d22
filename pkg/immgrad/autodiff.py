"""Forward-mode automatic differentiation for the small dense linear algebra of Kalman and IMM filters.

Every quantity is a :class:`Dual`: a value together with a *tangent*, the derivative of the value with respect to each
of ``D`` trainable parameters. Tangents are stored densely with the parameter axis first::

    value.shape   == (*batch, *shape)
    tangent.shape == (D, *batch, *shape)

so that a single :class:`DiffScalar` or :class:`DiffMatrix` can hold the same quantity for a whole batch of
trajectories. Values broadcast following numpy's rules, and tangents broadcast along with them.

Example:

    >>> from immgrad.autodiff import TangentSpace
    >>> space = TangentSpace(2)
    >>> x = space.lift_parameter(2.0, 0)
    >>> y = x * x + space.lift_constant(1.0)
    >>> float(y), y.tangent
    (5.0, array([4., 0.]))

A :class:`TangentSpace` of dimension zero turns every computation into a plain, non-differentiating evaluation.

Symmetric positive definite systems are never inverted explicitly; :func:`solve_spd`, :func:`logdet_spd` and
:func:`gaussian_log_pdf` work on Cholesky factors, for values and tangents alike::

    d(M⁻¹B)    = M⁻¹ (dB − dM M⁻¹B)
    d log|M|   = trace(M⁻¹ dM)

"""

import logging
import math
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import expit, logsumexp as scipy_logsumexp

from .errors import ConfigurationError, FilterDivergenceError, NumericDomainError, ShapeError


log = logging.getLogger(__name__)

LOG_2PI: float = math.log(2.0 * math.pi)

ArrayLike = Union[float, int, Sequence, np.ndarray]


def align_tangent(tangent: np.ndarray, value_ndim: int, target_ndim: int) -> np.ndarray:
    """Reshapes a tangent so that it broadcasts like a value of rank :obj:`target_ndim`.

    Numpy aligns shapes on their trailing axes. Tangents carry an extra leading parameter axis, so the missing batch
    axes have to be inserted *after* it rather than in front of it.

    """
    if value_ndim >= target_ndim:
        return tangent
    return tangent.reshape((tangent.shape[0],) + (1,) * (target_ndim - value_ndim) + tangent.shape[1:])


def _first_offending(values: np.ndarray, mask: np.ndarray) -> float:
    return float(np.asarray(values)[mask].flat[0])


class Dual:
    """Base class of differentiable values."""

    __slots__ = ('value', 'tangent')

    # Make numpy defer to our reflected operators, e.g., ``ndarray - DiffMatrix``.
    __array_ufunc__ = None

    def __init__(self, value: ArrayLike, tangent: ArrayLike):
        """Initializes a differentiable value.

        Args:
            value: The value.
            tangent: The derivatives of :obj:`value`; its shape must be ``(D,) + value.shape``.

        Raises:
            ShapeError: If the shapes of :obj:`value` and :obj:`tangent` do not agree.

        """
        value = np.asarray(value, dtype=float)
        tangent = np.asarray(tangent, dtype=float)
        if tangent.ndim < 1 or tangent.shape[1:] != value.shape:
            raise ShapeError(
                "A tangent must have one leading parameter axis in addition to the shape of its value",
                left=value.shape, right=tangent.shape
            )
        self.value: np.ndarray = value
        """The value of this quantity."""
        self.tangent: np.ndarray = tangent
        """The derivatives of :attr:`value` with respect to each trainable parameter."""

    @property
    def dimension(self) -> int:
        """The number of trainable parameters, ``D``."""
        return self.tangent.shape[0]

    def _check_dimension(self, other: 'Dual'):
        if other.dimension != self.dimension:
            raise ShapeError("Tangent lengths differ", left=self.dimension, right=other.dimension)

    def is_constant(self) -> bool:
        """Returns whether every derivative of this quantity is exactly zero."""
        return not np.any(self.tangent)


class DiffScalar(Dual):
    """A differentiable scalar, or a batch of differentiable scalars."""

    __slots__ = ()

    def _coerce(self, other: Union['DiffScalar', ArrayLike]) -> 'DiffScalar':
        if isinstance(other, DiffScalar):
            self._check_dimension(other)
            return other
        elif isinstance(other, Dual):
            raise ShapeError(f"Cannot combine a scalar with a {other.__class__.__name__}")
        value = np.asarray(other, dtype=float)
        return DiffScalar(value, np.zeros((self.dimension,) + value.shape))

    def _pair(self, other: 'DiffScalar') -> Tuple[np.ndarray, np.ndarray]:
        ndim = max(self.value.ndim, other.value.ndim)
        return align_tangent(self.tangent, self.value.ndim, ndim), align_tangent(other.tangent, other.value.ndim, ndim)

    def __add__(self, other) -> 'DiffScalar':
        other = self._coerce(other)
        ta, tb = self._pair(other)
        return DiffScalar(self.value + other.value, ta + tb)

    __radd__ = __add__

    def __sub__(self, other) -> 'DiffScalar':
        other = self._coerce(other)
        ta, tb = self._pair(other)
        return DiffScalar(self.value - other.value, ta - tb)

    def __rsub__(self, other) -> 'DiffScalar':
        return self._coerce(other) - self

    def __mul__(self, other) -> 'DiffScalar':
        if isinstance(other, DiffMatrix):
            return other.scale(self)
        other = self._coerce(other)
        ta, tb = self._pair(other)
        return DiffScalar(self.value * other.value, ta * other.value + self.value * tb)

    __rmul__ = __mul__

    def __truediv__(self, other) -> 'DiffScalar':
        other = self._coerce(other)
        zero = other.value == 0
        if np.any(zero):
            raise NumericDomainError("Division by zero", operation='divide', value=_first_offending(other.value, zero))
        ta, tb = self._pair(other)
        quotient = self.value / other.value
        return DiffScalar(quotient, (ta - quotient * tb) / other.value)

    def __rtruediv__(self, other) -> 'DiffScalar':
        return self._coerce(other) / self

    def __neg__(self) -> 'DiffScalar':
        return DiffScalar(-self.value, -self.tangent)

    def __float__(self) -> float:
        if self.value.ndim != 0:
            raise ShapeError("Only unbatched scalars can be converted to float", left=self.value.shape)
        return float(self.value)

    def __getitem__(self, index) -> 'DiffScalar':
        """Selects entries along the batch axes."""
        if not isinstance(index, tuple):
            index = (index,)
        return DiffScalar(self.value[index], self.tangent[(slice(None),) + index])

    def exp(self) -> 'DiffScalar':
        value = np.exp(self.value)
        return DiffScalar(value, self.tangent * value)

    def log(self) -> 'DiffScalar':
        invalid = ~(self.value > 0)
        if np.any(invalid):
            raise NumericDomainError("Logarithm of a non-positive value", operation='log',
                                     value=_first_offending(self.value, invalid))
        return DiffScalar(np.log(self.value), self.tangent / self.value)

    def sqrt(self) -> 'DiffScalar':
        invalid = ~(self.value > 0)
        if np.any(invalid):
            raise NumericDomainError("Square root of a non-positive value", operation='sqrt',
                                     value=_first_offending(self.value, invalid))
        value = np.sqrt(self.value)
        return DiffScalar(value, self.tangent * (0.5 / value))

    def square(self) -> 'DiffScalar':
        return DiffScalar(self.value * self.value, self.tangent * (2.0 * self.value))

    def sigmoid(self) -> 'DiffScalar':
        """The logistic function ``1 / (1 + exp(-x))``."""
        value = expit(self.value)
        return DiffScalar(value, self.tangent * (value * (1.0 - value)))

    def __repr__(self):
        return f"{self.__class__.__name__}(value={self.value!r}, tangent={self.tangent!r})"


class DiffMatrix(Dual):
    """A differentiable matrix, or a batch of differentiable matrices.

    The last two axes of :attr:`value` are the rows and columns of the matrix; any leading axes are batch axes.

    """

    __slots__ = ('symmetric',)

    def __init__(self, value: ArrayLike, tangent: ArrayLike, symmetric: bool = False):
        super().__init__(value, tangent)
        if self.value.ndim < 2:
            raise ShapeError("A matrix needs at least two axes", left=self.value.shape)
        self.symmetric: bool = symmetric
        """Whether this matrix was explicitly symmetrized (see :meth:`DiffMatrix.symmetrize`)."""

    @classmethod
    def constant(cls, value: ArrayLike, dimension: int) -> 'DiffMatrix':
        """Lifts a constant matrix, whose tangent is all zeros."""
        value = np.asarray(value, dtype=float)
        return cls(value, np.zeros((dimension,) + value.shape))

    @classmethod
    def identity(cls, n: int, dimension: int) -> 'DiffMatrix':
        return cls.constant(np.eye(n), dimension)

    @classmethod
    def from_scalars(cls, rows: Sequence[Sequence[DiffScalar]]) -> 'DiffMatrix':
        """Assembles a matrix from a grid of :class:`DiffScalar` entries.

        The entries may have different (but broadcastable) batch shapes.

        Raises:
            ShapeError: If the grid is ragged or the entries' tangent lengths differ.

        """
        if not rows or not rows[0]:
            raise ShapeError("Cannot build a matrix from an empty grid")
        cols = len(rows[0])
        if any(len(row) != cols for row in rows):
            raise ShapeError("Ragged grid of matrix entries", left=[len(row) for row in rows])
        entries = [entry for row in rows for entry in row]
        dimension = entries[0].dimension
        for entry in entries:
            if entry.dimension != dimension:
                raise ShapeError("Tangent lengths differ", left=dimension, right=entry.dimension)
        batch = np.broadcast_shapes(*(entry.value.shape for entry in entries))
        values = np.empty(batch + (len(rows), cols))
        tangents = np.empty((dimension,) + batch + (len(rows), cols))
        for i, row in enumerate(rows):
            for j, entry in enumerate(row):
                values[..., i, j] = entry.value
                tangents[..., i, j] = align_tangent(entry.tangent, entry.value.ndim, len(batch))
        return cls(values, tangents)

    @property
    def rows(self) -> int:
        return self.value.shape[-2]

    @property
    def cols(self) -> int:
        return self.value.shape[-1]

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        return self.value.shape[:-2]

    def _coerce(self, other: Union['DiffMatrix', ArrayLike]) -> 'DiffMatrix':
        if isinstance(other, DiffMatrix):
            self._check_dimension(other)
            return other
        elif isinstance(other, Dual):
            raise ShapeError(f"Cannot combine a matrix with a {other.__class__.__name__}")
        return DiffMatrix.constant(other, self.dimension)

    def _check_same_shape(self, other: 'DiffMatrix'):
        if self.value.shape[-2:] != other.value.shape[-2:]:
            raise ShapeError("Matrix dimensions do not agree", left=self.value.shape[-2:], right=other.value.shape[-2:])

    def _pair(self, other: 'Dual') -> Tuple[np.ndarray, np.ndarray]:
        ndim = max(self.value.ndim, other.value.ndim)
        return align_tangent(self.tangent, self.value.ndim, ndim), align_tangent(other.tangent, other.value.ndim, ndim)

    def __add__(self, other) -> 'DiffMatrix':
        other = self._coerce(other)
        self._check_same_shape(other)
        ta, tb = self._pair(other)
        return DiffMatrix(self.value + other.value, ta + tb)

    __radd__ = __add__

    def __sub__(self, other) -> 'DiffMatrix':
        other = self._coerce(other)
        self._check_same_shape(other)
        ta, tb = self._pair(other)
        return DiffMatrix(self.value - other.value, ta - tb)

    def __rsub__(self, other) -> 'DiffMatrix':
        return self._coerce(other) - self

    def __neg__(self) -> 'DiffMatrix':
        return DiffMatrix(-self.value, -self.tangent, symmetric=self.symmetric)

    def __matmul__(self, other) -> 'DiffMatrix':
        other = self._coerce(other)
        if self.cols != other.rows:
            raise ShapeError("Inner matrix dimensions do not agree", left=self.value.shape[-2:],
                             right=other.value.shape[-2:])
        ta, tb = self._pair(other)
        return DiffMatrix(self.value @ other.value, ta @ other.value + self.value @ tb)

    def __rmatmul__(self, other) -> 'DiffMatrix':
        return self._coerce(other) @ self

    def __mul__(self, other) -> 'DiffMatrix':
        return self.scale(other)

    __rmul__ = __mul__

    @property
    def T(self) -> 'DiffMatrix':
        """The transpose of this matrix (of each matrix in the batch)."""
        return DiffMatrix(np.swapaxes(self.value, -1, -2), np.swapaxes(self.tangent, -1, -2), symmetric=self.symmetric)

    def transpose(self) -> 'DiffMatrix':
        return self.T

    def scale(self, factor: Union[DiffScalar, float]) -> 'DiffMatrix':
        """Multiplies every entry by a scalar (or by one scalar per batch element)."""
        if not isinstance(factor, DiffScalar):
            factor = np.asarray(factor, dtype=float)
            return DiffMatrix(self.value * factor[..., None, None], self.tangent * factor[..., None, None],
                              symmetric=self.symmetric)
        self._check_dimension(factor)
        s_value = factor.value[..., None, None]
        s_tangent = factor.tangent[..., None, None]
        ta, tb = self._pair(DiffMatrix(s_value, s_tangent))
        return DiffMatrix(self.value * s_value, ta * s_value + self.value * tb, symmetric=self.symmetric)

    def symmetrize(self) -> 'DiffMatrix':
        """Returns ``(M + Mᵀ) / 2``, tagged as symmetric."""
        value = 0.5 * (self.value + np.swapaxes(self.value, -1, -2))
        tangent = 0.5 * (self.tangent + np.swapaxes(self.tangent, -1, -2))
        return DiffMatrix(value, tangent, symmetric=True)

    def is_symmetric(self, rtol: float = 1e-12) -> bool:
        asymmetry = np.abs(self.value - np.swapaxes(self.value, -1, -2))
        scale = np.maximum(np.abs(self.value), 1.0)
        return bool(np.all(asymmetry <= rtol * scale))

    def __getitem__(self, index: Tuple[int, int]) -> DiffScalar:
        """Returns entry ``(row, col)`` of this matrix as a :class:`DiffScalar` (with this matrix's batch shape)."""
        row, col = index
        return DiffScalar(self.value[..., row, col], self.tangent[..., row, col])

    def column(self, col: int) -> 'DiffMatrix':
        return DiffMatrix(self.value[..., :, col:col + 1], self.tangent[..., :, col:col + 1])

    def block(self, rows: slice, cols: slice) -> 'DiffMatrix':
        return DiffMatrix(self.value[..., rows, cols], self.tangent[..., rows, cols])

    def batch(self, index) -> 'DiffMatrix':
        """Selects entries along the batch axes."""
        if not isinstance(index, tuple):
            index = (index,)
        return DiffMatrix(self.value[index], self.tangent[(slice(None),) + index], symmetric=self.symmetric)

    def trace(self) -> DiffScalar:
        return DiffScalar(np.trace(self.value, axis1=-2, axis2=-1), np.trace(self.tangent, axis1=-2, axis2=-1))

    def __repr__(self):
        return f"{self.__class__.__name__}(value={self.value!r}, symmetric={self.symmetric!r})"


class TangentSpace:
    """Creates the constants and parameters of a computation with a fixed number of trainable parameters.

    The dimension is fixed at construction; parameters that should not be trained in a particular computation are
    lifted with :meth:`TangentSpace.lift_constant` rather than shrinking the space.

    """

    def __init__(self, dimension: int):
        if dimension < 0:
            raise ConfigurationError(f"The tangent dimension must be non-negative, not {dimension}")
        self.dimension: int = dimension
        """The number of trainable parameters, ``D``."""

    def lift_constant(self, value: ArrayLike) -> DiffScalar:
        """Lifts a constant (or a batch of constants); its tangent is all zeros."""
        value = np.asarray(value, dtype=float)
        return DiffScalar(value, np.zeros((self.dimension,) + value.shape))

    def lift_parameter(self, value: ArrayLike, slot: int) -> DiffScalar:
        """Lifts a trainable parameter, seeding its tangent with the unit vector for :obj:`slot`.

        Raises:
            ConfigurationError: If :obj:`slot` is not in ``[0, D)``.

        """
        if not 0 <= slot < self.dimension:
            raise ConfigurationError(f"Parameter slot {slot} is out of range for a tangent space of dimension "
                                     f"{self.dimension}")
        value = np.asarray(value, dtype=float)
        tangent = np.zeros((self.dimension,) + value.shape)
        tangent[slot] = 1.0
        return DiffScalar(value, tangent)

    def matrix(self, value: ArrayLike) -> DiffMatrix:
        """Lifts a constant matrix."""
        return DiffMatrix.constant(value, self.dimension)

    def identity(self, n: int) -> DiffMatrix:
        return DiffMatrix.identity(n, self.dimension)

    def __repr__(self):
        return f"{self.__class__.__name__}({self.dimension})"


def _cholesky(matrix: DiffMatrix) -> np.ndarray:
    if not np.all(np.isfinite(matrix.value)):
        raise FilterDivergenceError("A matrix that must be positive definite has non-finite entries")
    try:
        return np.linalg.cholesky(matrix.value)
    except np.linalg.LinAlgError as e:
        raise FilterDivergenceError(f"A matrix that must be positive definite is not: {e!s}") from e


def _cho_solve(factor: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solves ``L Lᵀ X = rhs`` for a (batch of) lower Cholesky factor(s).

    ``rhs`` may carry extra leading axes, such as the tangent axis, in front of the batch axes of ``factor``. They are
    folded into the columns of the right hand side, so every distinct factor is solved against exactly once.

    """
    if rhs.ndim < factor.ndim:
        rhs = rhs.reshape((1,) * (factor.ndim - rhs.ndim) + rhs.shape)
    lead = rhs.ndim - factor.ndim
    batch = np.broadcast_shapes(factor.shape[:-2], rhs.shape[lead:-2])
    n, k = rhs.shape[-2:]
    out_shape = rhs.shape[:lead] + batch + (n, k)
    if rhs.size == 0 or factor.size == 0:
        return np.zeros(out_shape)
    factors = np.broadcast_to(factor, batch + (n, n)).reshape(-1, n, n)
    columns = np.broadcast_to(rhs, out_shape).reshape((-1,) + batch + (n, k))
    columns = np.moveaxis(columns, 0, -1).reshape(factors.shape[0], n, -1)
    solved = np.stack([
        cho_solve((lower, True), b, check_finite=False) for lower, b in zip(factors, columns)
    ])
    solved = np.moveaxis(solved.reshape(batch + (n, k, -1)), -1, 0)
    return solved.reshape(out_shape)


def _solve_with_factor(factor: np.ndarray, matrix: DiffMatrix, rhs: DiffMatrix) -> DiffMatrix:
    solution = _cho_solve(factor, rhs.value)
    ndim = solution.ndim
    d_rhs = align_tangent(rhs.tangent, rhs.value.ndim, ndim)
    d_matrix = align_tangent(matrix.tangent, matrix.value.ndim, ndim)
    perturbation = d_rhs - d_matrix @ solution
    return DiffMatrix(solution, _cho_solve(factor, perturbation))


def _logdet_with_factor(factor: np.ndarray, matrix: DiffMatrix) -> DiffScalar:
    value = 2.0 * np.sum(np.log(np.diagonal(factor, axis1=-2, axis2=-1)), axis=-1)
    tangent = np.trace(_cho_solve(factor, matrix.tangent), axis1=-2, axis2=-1)
    return DiffScalar(value, tangent)


def solve_spd(matrix: DiffMatrix, rhs: Union[DiffMatrix, ArrayLike]) -> DiffMatrix:
    """Solves ``M X = B`` for a symmetric positive definite ``M`` through its Cholesky factorization.

    Args:
        matrix: The symmetric positive definite matrix ``M``.
        rhs: The right hand side ``B``; constants are lifted automatically.

    Returns:
        DiffMatrix: ``X = M⁻¹B``, with tangent ``M⁻¹(dB − dM X)``.

    Raises:
        FilterDivergenceError: If ``M`` is not positive definite.
        ShapeError: If the dimensions do not conform.

    """
    rhs = matrix._coerce(rhs)
    if matrix.rows != matrix.cols or matrix.cols != rhs.rows:
        raise ShapeError("solve_spd needs a square matrix conforming with the right hand side",
                         left=matrix.value.shape[-2:], right=rhs.value.shape[-2:])
    return _solve_with_factor(_cholesky(matrix), matrix, rhs)


def logdet_spd(matrix: DiffMatrix) -> DiffScalar:
    """The log-determinant of a symmetric positive definite matrix, with tangent ``trace(M⁻¹ dM)``."""
    if matrix.rows != matrix.cols:
        raise ShapeError("logdet_spd needs a square matrix", left=matrix.value.shape[-2:])
    return _logdet_with_factor(_cholesky(matrix), matrix)


def gaussian_log_pdf(z: ArrayLike, mean: DiffMatrix, cov: DiffMatrix) -> DiffScalar:
    """Evaluates ``log N(z; mean, cov)``.

    Args:
        z: The observation, either as a vector of shape ``(*batch, l)`` or as a column of shape ``(*batch, l, 1)``.
        mean: The mean, a column of shape ``(*batch, l, 1)``.
        cov: The symmetric positive definite covariance, ``(*batch, l, l)``.

    Returns:
        DiffScalar: ``−½(l·log 2π + log|cov| + νᵀ cov⁻¹ ν)`` with ``ν = z − mean``.

    """
    z = np.asarray(z, dtype=float)
    if z.ndim < 2 or z.shape[-1] != 1:
        z = z[..., None]
    if mean.cols != 1 or z.shape[-2] != mean.rows or cov.rows != mean.rows or cov.cols != mean.rows:
        raise ShapeError("Observation, mean and covariance dimensions do not agree",
                         left=(z.shape[-2:], mean.value.shape[-2:]), right=cov.value.shape[-2:])
    factor = _cholesky(cov)
    innovation = z - mean
    mahalanobis = (innovation.T @ _solve_with_factor(factor, cov, innovation))[0, 0]
    logdet = _logdet_with_factor(factor, cov)
    return -0.5 * (mahalanobis + logdet + mean.rows * LOG_2PI)


def logsumexp(terms: Sequence[DiffScalar]) -> DiffScalar:
    """Computes ``log Σ exp(terms)`` stably; the tangent is the softmax-weighted sum of the terms' tangents."""
    if not terms:
        raise ShapeError("logsumexp of an empty sequence")
    batch = np.broadcast_shapes(*(term.value.shape for term in terms))
    values = np.stack([np.broadcast_to(term.value, batch) for term in terms], axis=-1)
    with np.errstate(invalid='ignore'):
        total = scipy_logsumexp(values, axis=-1)
        weights = np.exp(values - total[..., None])
    tangent = np.zeros((terms[0].dimension,) + batch)
    for k, term in enumerate(terms):
        tangent = tangent + align_tangent(term.tangent, term.value.ndim, len(batch)) * weights[..., k]
    return DiffScalar(total, tangent)


def weighted_sum(weights: Iterable[DiffScalar], matrices: Iterable[DiffMatrix]) -> DiffMatrix:
    """Computes ``Σ wᵢ Mᵢ``."""
    total: Optional[DiffMatrix] = None
    for weight, matrix in zip(weights, matrices):
        term = matrix.scale(weight)
        total = term if total is None else total + term
    if total is None:
        raise ShapeError("weighted_sum of an empty sequence")
    return total
