"""Exception and warning types raised by permhc."""

from __future__ import annotations


class PermHCError(Exception):
    """Base class for all library errors."""


class DomainError(PermHCError, ValueError):
    """An argument lies outside the domain of the operation."""


class DegenerateStandardization(PermHCError, ArithmeticError):
    """A standardized count has zero variance but a nonzero numerator."""


class DegenerateGridWarning(UserWarning):
    """The data-dependent grid collapsed to ``{0}`` (constant data)."""


class PlanTooLarge(PermHCError):
    """Full enumeration was requested for too many entries."""


class StatisticDegenerate(PermHCError):
    """The statistic is permutation invariant, so it cannot be calibrated."""


class SignalOutOfRange(PermHCError, ValueError):
    """The natural parameter is at or beyond the family's upper limit."""


class NonStationaryFit(PermHCError):
    """The AR(1) autocorrelation estimate is 1, so the level is undefined."""


class EverythingAnomalous(PermHCError):
    """Outlier exclusion removed every stream."""


class ParseError(PermHCError, ValueError):
    """Malformed CSV input. Carries 1-based ``row`` / ``column`` when known."""

    def __init__(self, message: str, row: int | None = None, column: int | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.row = row
        self.column = column
