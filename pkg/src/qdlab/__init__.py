"""Numerical laboratory for central values of quadratic Dirichlet L-functions.

The family runs over odd square-free d > 0 with character chi_8d = (8d/.).
Subpackages split along the pipeline: exact arithmetic (arith), central
values and their cache (lvalues), the truncated-exponential bound machinery
(machinery), and moment/distribution experiments (moments).  The qdlab
console script fronts the lot.
"""

__version__ = "0.1.0"

from .errors import (
    CacheFormatError,
    ConfigError,
    CoverageError,
    DomainError,
    PrecisionError,
    ResourceError,
    StorageError,
)

__all__ = [
    "CacheFormatError",
    "ConfigError",
    "CoverageError",
    "DomainError",
    "PrecisionError",
    "ResourceError",
    "StorageError",
    "__version__",
]
