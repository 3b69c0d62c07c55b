"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
anything else -> 3.
"""


class GlyconetError(Exception):
    """Base class for package errors."""


class UsageError(GlyconetError):
    """Caller asked for something the tool cannot do (bad flags, bad config)."""


class DataError(GlyconetError):
    """Input data is missing, malformed, or violates a documented contract."""


class ModelFormatError(DataError):
    """A persisted model file is truncated, unversioned, or from a different format."""


class TrainingDivergedError(GlyconetError):
    """A non-finite gradient appeared; training was aborted before corrupting weights."""

    def __init__(self, message: str, epoch: int, batch: int):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
