"""Exception hierarchy shared by every empmp module."""


class EmpmpError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(EmpmpError, ValueError):
    """Tensor shapes do not line up for the requested operation."""


class LayoutError(EmpmpError, ValueError):
    """Requested axis layout is not supported (e.g. merging non-adjacent axes)."""


class ConfigError(EmpmpError, ValueError):
    """Invalid hyper-parameter or run configuration."""


class ContractError(EmpmpError, ValueError):
    """A documented precondition of an operation was violated."""


class TapeError(EmpmpError, RuntimeError):
    """Differentiation was requested for a value not recorded on the tape."""


class NumericError(EmpmpError, ArithmeticError):
    """A non-finite value appeared where finite numbers are required."""


class ParseError(EmpmpError, ValueError):
    """A file could not be parsed; message carries the line or byte offset."""


class ValidationError(EmpmpError, ValueError):
    """Parsed data violates a domain invariant."""
