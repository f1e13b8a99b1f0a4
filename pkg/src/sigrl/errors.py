"""Exception taxonomy shared across the package.

``ConfigError`` marks bad configuration or usage and maps to CLI exit code 1;
every other ``SigrlError`` is a runtime failure and maps to exit code 2.
"""

from __future__ import annotations


class SigrlError(Exception):
    """Base class for every failure this package raises on purpose."""


class ConfigError(SigrlError):
    """Invalid configuration value or flag combination."""


class DataError(SigrlError):
    """Semantically invalid data (shape drift, missing positives, ...)."""


class DatasetFormatError(DataError):
    """A byte-level problem in a serialized container.

    ``offset`` is the file position where the problem was detected.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class BadMagicError(DatasetFormatError):
    pass


class VersionError(DatasetFormatError):
    pass


class TruncatedError(DatasetFormatError):
    pass


class DimensionError(DatasetFormatError):
    pass


class LabelValueError(DatasetFormatError):
    pass


class TrainingDivergedError(SigrlError):
    """Loss became non-finite; the message carries epoch and batch indices."""


class GradientError(SigrlError):
    """A parameter gradient became non-finite inside the optimizer."""
