"""Exception hierarchy shared by every module."""

from __future__ import annotations


class UplmeError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(UplmeError, ValueError):
    pass


class DegenerateInputError(InvalidInputError):
    """Input is well-formed but the requested statistic is undefined for it."""


class CorrelationUndefinedError(DegenerateInputError):
    """A correlation was requested for a zero-variance vector.

    ``rmse`` carries the error-magnitude metric, which stays well defined.
    """

    def __init__(self, message: str, rmse: float | None = None):
        super().__init__(message)
        self.rmse = rmse


class NonFiniteLossError(UplmeError, ArithmeticError):
    """A loss component evaluated to NaN or infinity."""

    def __init__(self, component: str, value: float):
        super().__init__(f"loss component {component!r} is not finite ({value})")
        self.component = component
        self.value = value


class DatasetError(UplmeError):
    """A dataset file failed to parse. ``problems`` lists (row, message) pairs."""

    def __init__(self, path, problems: list[tuple[int, str]]):
        lines = [f"{path}: {len(problems)} problem(s)"]
        lines += [f"  row {row}: {msg}" for row, msg in problems[:50]]
        super().__init__("\n".join(lines))
        self.path = path
        self.problems = problems


class ConfigError(UplmeError, ValueError):
    pass


class CheckpointError(UplmeError):
    pass
