"""Exception hierarchy shared across the package.

The CLI maps each class to a distinct exit code, so keep the tree flat and
the categories coarse.
"""


class PairVerifyError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(PairVerifyError):
    """A vector or matrix did not have the expected dimensions."""


class NumericError(PairVerifyError):
    """A non-finite value appeared where finite math was required."""


class UsageError(PairVerifyError):
    """An operation was called with invalid arguments or counts."""


class DataFormatError(PairVerifyError):
    """A data file line could not be parsed; the message names the line."""


class SchemaVersionError(PairVerifyError):
    """A file declared a schema version this build does not understand."""


class ConfigMismatchError(PairVerifyError):
    """A checkpoint or file disagrees with the expected configuration."""


class DataIntegrityError(PairVerifyError):
    """A pair referenced a commodity id that does not exist."""
