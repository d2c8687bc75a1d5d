"""Exception hierarchy shared by the package."""


class RGIFError(Exception):
    """Base class for all errors raised by rgif."""


class ContractError(RGIFError, ValueError):
    """An argument violates a documented precondition (shapes, ranges)."""


class ParameterError(ContractError):
    """A filter parameter is outside its admissible range."""


class FormatError(RGIFError, ValueError):
    """Unsupported file format, or channel count incompatible with the format."""


class DecodeError(RGIFError, ValueError):
    """The file could not be decoded (truncated or corrupt)."""
