"""Exception types raised across windcast."""

from __future__ import annotations


class WindcastError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(WindcastError, ValueError):
    """Input data or configuration violates a documented precondition."""


class NumericalError(WindcastError, ArithmeticError):
    """A computation produced a non-finite or undefined result."""


class MalformedRow(ValidationError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line


class NonUniformStride(ValidationError):
    def __init__(self, index: int, expected: int, found: int):
        super().__init__(
            f"non-uniform stride at sample {index}: expected {expected} s, found {found} s"
        )
        self.index = index


class NonFiniteValue(ValidationError):
    pass


class ConstantSeries(ValidationError):
    pass


class SeriesTooShort(ValidationError):
    pass


class HistoryTooShort(SeriesTooShort):
    def __init__(self, required: int, found: int):
        super().__init__(f"history has {found} samples, at least {required} required")
        self.required = required
        self.found = found


class EmptySplit(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class EmptyTable(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class MissingBackwardFeatures(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class VersionMismatch(ValidationError):
    pass


class TooFewExtrema(NumericalError):
    pass


class UndefinedEntropy(NumericalError):
    """Sample entropy is undefined because a template-match count is zero."""

    def __init__(self, a: int, b: int):
        super().__init__(f"sample entropy undefined (A={a}, B={b})")
        self.a = a
        self.b = b


class ZeroMeanActual(NumericalError):
    pass


class DegenerateDenominator(NumericalError):
    pass


class NonFiniteLoss(NumericalError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite training loss {loss!r} at epoch {epoch}")
        self.epoch = epoch


class StageError(WindcastError):
    """Wraps a failure inside the fitting pipeline with its stage and group."""

    def __init__(self, stage: str, group: int | None, cause: Exception):
        where = stage if group is None else f"{stage} (group {group})"
        super().__init__(f"{where}: {cause}")
        self.stage = stage
        self.group = group
        self.cause = cause
