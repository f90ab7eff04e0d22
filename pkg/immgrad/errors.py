"""Exception types raised by :mod:`immgrad`.

Every error derives from :class:`ImmGradError`. Errors carry their context (time step, trajectory index, file path,
epoch, …) as attributes, and render that context as part of their string representation. Outer layers re-raise errors
from inner layers with additional context, for example::

    try:
        ...
    except FilterDivergenceError as e:
        raise e.with_context(trajectory=index) from e

Each error type also declares the process exit code the command line interface uses when the error is not handled.

"""

from typing import Any, Dict, Optional


class ImmGradError(RuntimeError):
    """Base error type of :mod:`immgrad`."""

    exit_code: int = 1
    """The process exit code used by :func:`immgrad.__main__.main` when this error aborts a command."""

    context_fields: tuple = ()

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.message: str = message
        for field in self.context_fields:
            setattr(self, field, context.pop(field, None))
        if context:
            raise TypeError(f"Unexpected context for {self.__class__.__name__}: {', '.join(context)}")

    @property
    def context(self) -> Dict[str, Any]:
        """The non-empty context attributes of this error."""
        return {
            field: getattr(self, field) for field in self.context_fields if getattr(self, field) is not None
        }

    def with_context(self, **context) -> 'ImmGradError':
        """Returns a copy of this error with additional context.

        Context that is already set on this error is not overwritten.

        """
        merged = dict(context)
        merged.update(self.context)
        return self.__class__(self.message, **merged)

    def __str__(self):
        context = self.context
        if not context:
            return self.message
        rendered = ', '.join(f"{key}={value!r}" for key, value in context.items())
        return f"{self.message} ({rendered})"


class ConfigurationError(ImmGradError):
    """An invalid parameter, option, or configuration file."""
    context_fields = ('key',)


class ShapeError(ImmGradError, ValueError):
    """Non-conforming matrix dimensions or mismatched tangent lengths."""
    exit_code = 2
    context_fields = ('left', 'right')


class NumericDomainError(ImmGradError, ArithmeticError):
    """An operation was evaluated outside of its domain, *e.g.*, the logarithm of a non-positive number."""
    exit_code = 2
    context_fields = ('operation', 'value')


class FilterDivergenceError(ImmGradError):
    """A covariance that must be symmetric positive definite failed its Cholesky factorization."""
    exit_code = 2
    context_fields = ('step', 'trajectory')


class DegenerateWeightError(ImmGradError):
    """The mode weights of an IMM filter underflowed or became undefined."""
    exit_code = 2
    context_fields = ('mode', 'step', 'trajectory')


class DataError(ImmGradError):
    """Malformed or insufficient data, *e.g.*, a trajectory that is too short to initialize a filter."""
    context_fields = ('trajectory',)


class DatasetIOError(ImmGradError, OSError):
    """Reading or writing a file failed."""
    context_fields = ('path',)


class TrainingAbortedError(ImmGradError):
    """Training produced a non-finite loss or gradient."""
    exit_code = 2
    context_fields = ('epoch',)


class UndefinedBaselineError(ImmGradError, ZeroDivisionError):
    """A relative change was requested against a baseline metric of zero."""
    exit_code = 2
    context_fields = ('metric',)


def exit_code_for(error: BaseException, default: Optional[int] = 1) -> int:
    """Returns the exit code the command line interface should use for :obj:`error`."""
    if isinstance(error, ImmGradError):
        return error.exit_code
    elif isinstance(error, OSError):
        return 1
    elif isinstance(error, (ArithmeticError, FloatingPointError)):
        return 2
    return default
