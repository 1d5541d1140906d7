"""Exception types shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific one that applies instead of bare ValueError/RuntimeError.
"""


class ConfigError(Exception):
    """Invalid configuration value, missing key, or inconsistent settings."""


class ShapeError(ValueError):
    """Array dimensions do not match the model or each other."""


class DomainError(ValueError):
    """Value outside its mathematical domain (nonpositive variance, constant
    input to a correlation, enumeration over too many units, ...)."""


class NumericError(ArithmeticError):
    """Non-finite values produced where finite ones are required."""


class FormatError(RuntimeError):
    """Malformed artifact file: bad magic, truncated payload, checksum
    mismatch, or header inconsistent with the payload."""
