"""Exception types shared across the package."""


class GwrlabError(Exception):
    """Base class for all package errors."""


class SchemaError(GwrlabError):
    """Input file does not match the declared schema."""


class IngestionError(GwrlabError):
    """Input file unreadable or structurally invalid."""


class ZeroVarianceError(GwrlabError):
    """A variable required to vary is constant."""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"column {name!r} has zero variance")


class RankDeficiencyError(GwrlabError):
    """Design matrix is rank deficient; names a dependent column set."""

    def __init__(self, columns, message=None):
        self.columns = tuple(columns)
        super().__init__(
            message or f"design matrix is rank deficient; dependent columns: {', '.join(self.columns)}"
        )


class LocalFitError(GwrlabError):
    """A per-location weighted fit could not be computed."""


class ConvergenceWarning(UserWarning):
    """Iterative procedure stopped before meeting its tolerance."""


class PipelineStageError(GwrlabError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"pipeline stage '{stage}' failed: {cause}")
