"""Exception taxonomy shared by all forgeloc modules.

The CLI maps these onto process exit codes: ConfigError -> 2,
data/format/shape problems -> 3, numeric failures -> 4.
"""


class ForgelocError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(ForgelocError):
    """Operand dimensions do not satisfy an operation's contract."""


class AlignmentError(ShapeError):
    """Two feature sequences disagree on frame count where they must match."""


class DomainError(ForgelocError):
    """A scalar or vector value lies outside the mathematical domain."""


class UpsampleError(DomainError):
    """Audio pooling was asked to produce more frames than it was given."""


class ConfigError(ForgelocError):
    """A configuration value or key is invalid."""


class FormatError(ForgelocError):
    """A file does not conform to its documented binary or JSON layout."""


class NumericError(ForgelocError):
    """A computation produced a non-finite value."""


class OracleScopeError(ForgelocError):
    """The evaluation oracle was called outside its supported problem size."""
