"""Exception types shared across the toolkit."""


class OccuprobeError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(OccuprobeError):
    """Invalid configuration, scheme, or input data."""


class PlanError(ValidationError):
    """A generation plan could not be built or validated."""


class BackendError(OccuprobeError):
    """A generation backend is unreachable or failed permanently."""

    def __init__(self, message: str, completed: int = 0):
        super().__init__(message)
        self.completed = completed


class ProtocolError(BackendError):
    """A backend response violated the wire protocol."""


class CorpusIntegrityError(OccuprobeError):
    """A corpus file failed header, hash, or sequence checks."""


class DataLoadError(OccuprobeError):
    """A data file (lexicon, labor table, match table) failed to load."""


class DegenerateFitError(OccuprobeError):
    """A regression cannot be fit (all-zero or all-one outcomes)."""


class UndefinedDistributionError(OccuprobeError):
    """A distributional statistic is undefined (e.g. all-zero counts)."""
