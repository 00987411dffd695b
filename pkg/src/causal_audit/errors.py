"""Exception hierarchy shared by every module of the toolkit."""

from __future__ import annotations


class CausalAuditError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(CausalAuditError, ValueError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class SchemaError(CausalAuditError, ValueError):
    def __init__(self, column: str, message: str | None = None):
        self.column = column
        super().__init__(message or f"missing required column {column!r}")


class RowError(CausalAuditError, ValueError):
    def __init__(self, row: int, message: str):
        self.row = row
        super().__init__(f"row {row}: {message}")


class IntegrityError(CausalAuditError, ValueError):
    pass


class DomainError(CausalAuditError, ValueError):
    pass


class ShapeError(CausalAuditError, ValueError):
    pass


class ConvergenceError(CausalAuditError, RuntimeError):
    """Optimizer ran out of iterations; ``model`` holds the last iterate."""

    def __init__(self, message: str, model=None):
        self.model = model
        super().__init__(message)


class SeparationWarning(UserWarning):
    pass


class PositivityError(CausalAuditError, ValueError):
    def __init__(self, rows, message: str | None = None):
        self.rows = list(rows)
        shown = ", ".join(str(r) for r in self.rows[:10])
        more = "" if len(self.rows) <= 10 else f" (+{len(self.rows) - 10} more)"
        super().__init__(message or f"propensity scores at 0 or 1 for rows {shown}{more}")


class DegenerateCovariateError(CausalAuditError, ValueError):
    def __init__(self, covariate: str):
        self.covariate = covariate
        super().__init__(f"covariate {covariate!r} has zero pooled variance")


class DegenerateGroupError(CausalAuditError, ValueError):
    pass


class CollinearityError(CausalAuditError, ValueError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"design matrix is rank deficient; dependent columns: {', '.join(self.columns)}")


class UnstableEstimateError(CausalAuditError, RuntimeError):
    def __init__(self, failures: int, n_boot: int):
        self.failures = failures
        self.n_boot = n_boot
        super().__init__(f"{failures} of {n_boot} bootstrap resamples failed (limit 10%)")


class InestimableError(CausalAuditError, ValueError):
    pass


class TrainingError(CausalAuditError, RuntimeError):
    """Loss became non-finite; ``state`` holds the last finite parameters."""

    def __init__(self, message: str, state=None, epoch: int | None = None):
        self.state = state
        self.epoch = epoch
        super().__init__(message)


class UndefinedMetricError(CausalAuditError, ValueError):
    pass
