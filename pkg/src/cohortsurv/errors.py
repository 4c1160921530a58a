"""Exception types shared across the package."""


class CohortSurvError(Exception):
    """Base class for all package errors."""


class ShapeError(CohortSurvError, ValueError):
    """Tensor or array dimensions do not satisfy an operation's contract."""


class ContractViolation(CohortSurvError, RuntimeError):
    """An operation was invoked outside its stated preconditions."""


class IngestionError(CohortSurvError, ValueError):
    """A cohort file failed validation; message names the patient and field."""


class ConfigError(CohortSurvError, ValueError):
    """A run configuration is inconsistent with the data it is applied to."""


class UndefinedMetricError(CohortSurvError, ValueError):
    """A metric has no defined value on the given inputs (e.g. no comparable pairs)."""


class UndefinedTestError(CohortSurvError, ValueError):
    """A statistical test is undefined on the given inputs (e.g. no events)."""


class TrainingDiverged(CohortSurvError, RuntimeError):
    """A training fold produced a non-finite loss."""
