# Copyright 2026 The sdernn Authors.
# See LICENSE file for licensing details.

"""Exceptions raised by the sdernn library."""

from typing import Any, Optional


class SdeRnnError(RuntimeError):
    """Base class for custom errors raised by this library."""


class ShapeError(SdeRnnError, ValueError):
    """Raised when operand dimensions do not conform."""


class ContractError(SdeRnnError):
    """Raised when a call contract is violated."""


class ValidationError(SdeRnnError, ValueError):
    """Raised when a domain value fails validation."""


class AlignmentError(ValidationError):
    """Raised when an observation time is not on the imputation grid."""

    def __init__(self, record_id: str, time: float):
        self.record_id = record_id
        self.time = time
        super().__init__(f"record {record_id!r}: observation time {time!r} is not on the grid")


class IntervalError(ValidationError):
    """Raised when an integration interval is empty or reversed."""

    def __init__(self, t0: float, t1: float):
        self.t0 = t0
        self.t1 = t1
        super().__init__(f"invalid integration interval: t1={t1!r} must exceed t0={t0!r}")


class DegenerateScaleError(ValidationError):
    """Raised when min-max normalization would divide by zero."""


class UndefinedLossError(SdeRnnError):
    """Raised when a loss has no masked-in entries to average over."""


class ConfigError(SdeRnnError):
    """Raised when a configuration object fails validation."""


class CsvParseError(SdeRnnError):
    """Raised on a malformed CSV row."""

    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class CheckpointError(SdeRnnError):
    """Raised when a checkpoint or manifest is malformed or incompatible."""


class DivergenceError(SdeRnnError):
    """Raised when a NaN or infinity appears during integration or training.

    Attributes:
        step: index of the failing integration step or training epoch.
        report: partial training report, when raised by training.
        last_params: last parameters known to be finite, when raised by training.
    """

    def __init__(
        self,
        message: str,
        step: Optional[int] = None,
        report: Any = None,
        last_params: Any = None,
    ):
        self.step = step
        self.report = report
        self.last_params = last_params
        super().__init__(message)
