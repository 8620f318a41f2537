"""Exception types shared across the toolkit."""


class SqlsynthError(Exception):
    """Base class for all toolkit errors."""


class SchemaFormatError(SqlsynthError):
    """Schema or corpus file does not match the documented layout."""


class SchemaIntegrityError(SqlsynthError):
    """Schema is internally inconsistent (dangling index, duplicate name)."""


class NoJoinPathError(SqlsynthError):
    """Requested tables are not connected in the foreign-key graph."""


class UnsupportedSyntaxError(SqlsynthError):
    """SQL construct outside the supported subset."""

    def __init__(self, construct: str, detail: str = ""):
        self.construct = construct
        msg = f"unsupported construct: {construct}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class ResolutionError(SqlsynthError):
    """Identifier in a query does not resolve against the schema."""


class AssignmentError(SqlsynthError):
    """Slot assignment violates injectivity or type compatibility."""


class EmptyColumnError(SqlsynthError):
    """Value sampling hit a column with no non-null stored values."""


class EmptyDistributionError(SqlsynthError):
    """Template distribution fit over an empty or fully skipped corpus."""


class UnfillableEnvironmentError(SqlsynthError):
    """No template in the distribution support is fillable in this environment."""


class UndefinedCoverageError(SqlsynthError):
    """Coverage requested over an empty evaluation corpus."""


class SamplingExhaustedError(SqlsynthError):
    """Query sampling failed to produce a valid query within the attempt budget."""

    def __init__(self, attempts: int, diagnostics: dict):
        self.attempts = attempts
        self.diagnostics = diagnostics
        super().__init__(f"sampling exhausted after {attempts} attempts: {diagnostics}")


class ExecutionError(SqlsynthError):
    """Query failed inside the database engine."""


class ExecutionTimeoutError(ExecutionError):
    """Query exceeded its wall-clock budget."""


class RejectedStatementError(ExecutionError):
    """Non-SELECT statement refused by the read-only executor."""


class GenerationError(SqlsynthError):
    """Randomized database content could not satisfy schema constraints."""


class AdapterError(SqlsynthError):
    """Model adapter crashed, timed out, or could not be spawned."""


class ProtocolError(AdapterError):
    """Model adapter violated the wire protocol."""


class InvalidPredictionError(SqlsynthError):
    """Adapter returned SQL that does not parse in the supported subset."""


class AlignmentError(SqlsynthError):
    """Gold and prediction files do not align one-to-one."""


class GoldError(SqlsynthError):
    """A gold query is unparseable or unexecutable; the example is reported."""
