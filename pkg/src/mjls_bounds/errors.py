"""Exception hierarchy shared by every module."""

from __future__ import annotations


class MjlsError(Exception):
    """Base class for all errors raised by mjls_bounds."""


class DimensionError(MjlsError, ValueError):
    """Shape, dimension, or parameter-range violation."""


class EmptyConstraintError(MjlsError):
    """Trimming the constraint deleted every symbol.

    No admissible bi-infinite switching sequence exists, so every bound is void.
    """


class NumericFlagError(MjlsError):
    """A numeric routine left its accuracy budget and the result is unusable."""


class ConfigError(MjlsError):
    """Malformed or inconsistent problem configuration."""
