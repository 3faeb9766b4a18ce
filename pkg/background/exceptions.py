"""
Error taxonomy for background modeling.

User-facing errors (bad files, bad parameters) map to exit code 1 in the
management commands; numerical failures map to exit code 2.
"""
from typing import Optional, Sequence


class BackgroundError(Exception):
    """Base class for every error raised by the background app."""

    exit_code = 1


class SpectrumValidationError(BackgroundError):
    """A cell violates the spectrum invariants (non-negative integer counts)."""

    def __init__(self, message: str, path: Optional[str] = None,
                 row: Optional[int] = None, column: Optional[int] = None):
        self.path = path
        self.row = row
        self.column = column
        location = ', '.join(
            f'{name} {value}'
            for name, value in (('file', path), ('row', row), ('column', column))
            if value is not None
        )
        super().__init__(f'{message} ({location})' if location else message)


class DimensionMismatchError(BackgroundError):
    """Bin counts disagree (ragged rows, model vs. spectrum, template vs. set)."""

    def __init__(self, message: str, expected: Optional[int] = None,
                 actual: Optional[int] = None, row: Optional[int] = None):
        self.expected = expected
        self.actual = actual
        self.row = row
        super().__init__(message)


class EmptyInputError(BackgroundError):
    pass


class InsufficientDataError(BackgroundError):
    pass


class ParameterError(BackgroundError, ValueError):
    """An argument is outside its documented range."""


class OptimizationError(BackgroundError):
    """The fit produced a non-finite loss."""

    exit_code = 2

    def __init__(self, message: str, iteration: int):
        self.iteration = iteration
        super().__init__(f'{message} (iteration {iteration})')


class ConvergenceError(BackgroundError):
    """An iterative solve ran out of iterations; carries the best iterate."""

    exit_code = 2

    def __init__(self, message: str, best_iterate=None, iterations: int = 0):
        self.best_iterate = best_iterate
        self.iterations = iterations
        super().__init__(message)


class SweepCellError(BackgroundError):
    """Wraps a failure inside one sweep cell with its coordinates."""

    def __init__(self, cause: BaseException, method: str, k: int, restart: int,
                 distance: Optional[float] = None):
        self.cause = cause
        self.method = method
        self.k = k
        self.restart = restart
        self.distance = distance
        self.exit_code = getattr(cause, 'exit_code', 2)
        coords = f'method={method} k={k} restart={restart}'
        if distance is not None:
            coords += f' distance_m={distance:g}'
        super().__init__(f'sweep cell [{coords}] failed: {type(cause).__name__}: {cause}')

    @property
    def coordinates(self) -> Sequence:
        return (self.method, self.k, self.restart, self.distance)


class NumericalCheckError(BackgroundError):
    """A post-condition on a numerical result failed (e.g. a basis lost orthonormality)."""

    exit_code = 2
