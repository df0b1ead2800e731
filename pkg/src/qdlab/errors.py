"""Exception types shared across the package.

The split mirrors how callers should react: DomainError for arguments outside
an operation's contract, ResourceError for work that would blow a configured
budget, PrecisionError when a certified-accuracy computation cannot converge,
and the cache/config/storage errors for the persistence layer and CLI.
"""

from __future__ import annotations


class DomainError(ValueError):
    """Argument outside the documented domain of an operation."""


class ResourceError(RuntimeError):
    """Request exceeds a configured memory or work budget."""


class PrecisionError(ArithmeticError):
    """A certified-precision computation failed to reach its target."""


class StorageError(RuntimeError):
    """Cache file could not be written."""


class CacheFormatError(ValueError):
    """Cache file failed structural validation.

    byte_offset points at the first byte where validation failed.
    """

    def __init__(self, message: str, byte_offset: int):
        super().__init__(f"{message} (at byte offset {byte_offset})")
        self.byte_offset = byte_offset


class CoverageError(ValueError):
    """A family computation needs L-values the cache does not hold.

    missing_ranges lists (lo, hi) pairs of uncovered d-intervals.
    """

    def __init__(self, missing_ranges: list[tuple[int, int]]):
        spans = ", ".join(f"[{lo}, {hi}]" for lo, hi in missing_ranges[:8])
        more = "" if len(missing_ranges) <= 8 else f" and {len(missing_ranges) - 8} more"
        super().__init__(f"cache missing d-ranges: {spans}{more}")
        self.missing_ranges = missing_ranges


class ConfigError(ValueError):
    """Config file rejected; line_no is 1-based."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"{message} (line {line_no})"
        super().__init__(message)
        self.line_no = line_no
