"""Exception hierarchy.

``ConfigError`` and ``DataError`` map onto the CLI exit codes 2 and 3.
"""


class DeepGwasError(Exception):
    pass


class ConfigError(DeepGwasError, ValueError):
    """Invalid parameters or configuration."""


class DataError(DeepGwasError):
    """Input data is malformed or unusable."""


class EncodingError(DataError, ValueError):
    """A genotype code falls outside {0, 1, 2, MISSING}."""


class FormatError(DataError):
    """Binary file could not be parsed."""


class BadMagicError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class DimensionMismatchError(FormatError):
    pass


class VersionError(FormatError):
    pass


class StatsError(DataError):
    """Statistic undefined, e.g. an all-missing SNP column."""


class EmptyResultError(DataError):
    """A filter or selection produced nothing."""


class SingularDesignError(DataError):
    """Design matrix is not of full column rank."""


class TrainingError(DeepGwasError):
    """Training diverged or could not run."""


class StaleTraceError(DeepGwasError):
    """A forward trace was used after the model parameters changed."""


class JoinError(DataError):
    """Two tables could not be aligned on their identifier column."""
