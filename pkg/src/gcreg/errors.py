"""Exception types shared across the package.

The CLI maps these onto process exit codes (config 2, data 3, numeric 4),
so library code should raise the most specific one that applies.
"""

from __future__ import annotations


class ConfigError(Exception):
    """Invalid or inconsistent run configuration."""


class DataError(Exception):
    """Input data violates a documented requirement (support, shape, NaN policy)."""


class NumericError(Exception):
    """Numerical failure inside the sampler (non-finite state, failed factorization)."""
