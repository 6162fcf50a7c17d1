"""
Framework Exception Module
==========================

Exception hierarchy for the SOLiD place recognition toolkit.
Every error the package raises on purpose derives from FrameworkException,
so callers (the CLI in particular) can tell data problems from bugs.

Usage:
    Raise the most specific subclass; catch FrameworkException at the
    boundary where an exit code or a log line is produced.

Example:
    >>> from utils.framework_exception import ScanFormatError
    >>>
    >>> if size % 16:
    ...     raise ScanFormatError(path, size)
"""

from typing import Optional


class FrameworkException(Exception):
    """
    Base exception class for all toolkit-specific errors.

    Attributes:
        message: Human-readable error description.

    Example:
        >>> raise FrameworkException(f"Scan directory is empty: {scans_dir}")
    """

    def __init__(self, message: str):
        """
        Initialize FrameworkException with an error message.

        Args:
            message: Descriptive error message explaining what went wrong.
        """
        self.message = message
        super().__init__(self.message)


# ============== Ingestion ==============

class ScanFormatError(FrameworkException):
    """A KITTI .bin scan whose size is not a whole number of (x, y, z, i) records."""

    def __init__(self, path, byte_count: int):
        self.path = str(path)
        self.byte_count = byte_count
        super().__init__(
            f"Malformed KITTI scan '{self.path}': {byte_count} bytes is not divisible by 16"
        )


class PoseFormatError(FrameworkException):
    """A pose line that does not hold 12 numbers."""

    def __init__(self, path, line_number: int, detail: str):
        self.path = str(path)
        self.line_number = line_number
        super().__init__(f"Bad pose at {self.path}:{line_number} | {detail}")


class RotationMatrixError(FrameworkException):
    """A rotation matrix too far from SO(3) to be trusted."""


class FovMaskError(FrameworkException):
    """An azimuth mask that is empty, overlapping or out of [0, 360)."""


class ConfigurationError(FrameworkException):
    """Invalid binning or run configuration."""


# ============== Descriptors & retrieval ==============

class DescriptorMismatchError(FrameworkException):
    """Vectors or records whose lengths disagree with each other or the config."""


class DatabaseError(FrameworkException):
    """Base class for descriptor database file problems."""


class BadMagicError(DatabaseError):
    """File does not start with the database magic bytes."""

    def __init__(self, path, magic: bytes):
        self.path = str(path)
        self.magic = magic
        super().__init__(f"Not a descriptor database '{self.path}' | Magic: {magic!r}")


class VersionMismatchError(DatabaseError):
    """Database written by an unsupported format version."""

    def __init__(self, path, version: int, expected: int):
        self.path = str(path)
        self.version = version
        super().__init__(
            f"Unsupported database version in '{self.path}' | Found: {version} | Expected: {expected}"
        )


class TruncatedDatabaseError(DatabaseError):
    """File ends inside the header or inside a record."""

    def __init__(self, path, record_index: Optional[int]):
        self.path = str(path)
        self.record_index = record_index
        where = "header" if record_index is None else f"record {record_index}"
        super().__init__(f"Truncated database '{self.path}' | Ends inside {where}")


# ============== Evaluation ==============

class UndefinedMetricError(FrameworkException):
    """A metric whose denominator is empty (e.g. Recall@1 without GT loops)."""


class MissingPositionsError(FrameworkException):
    """Ground truth requested for a database stored without positions."""


class PropertyFailure(FrameworkException):
    """A self-test property that did not hold."""

    def __init__(self, name: str, detail: str):
        self.name = name
        super().__init__(f"Property '{name}' failed | {detail}")
