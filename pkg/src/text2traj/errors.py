"""Exception hierarchy shared across the package.

CLI exit-code mapping: usage errors exit 1, data/validation errors exit 2,
numerical failures exit 3.
"""


class Text2TrajError(Exception):
    """Base class for all package errors."""


class InvalidInputError(Text2TrajError):
    """An argument violates a documented precondition."""


class ShapeError(InvalidInputError):
    """Tensor/vector dimensions disagree with the model or config."""


class ValidationError(Text2TrajError):
    """A record or file violates a structural invariant."""


class ParseError(ValidationError):
    """A text record could not be parsed."""


class FormatError(ValidationError):
    """A binary file has a bad magic number, version, or layout."""


class CacheKeyError(Text2TrajError):
    """An embedding-cache lookup failed."""


class ConfigMismatchError(Text2TrajError):
    """A checkpoint's stored config disagrees with the requested one."""


class NonFiniteLossError(Text2TrajError):
    """Training produced a NaN/Inf loss term."""
