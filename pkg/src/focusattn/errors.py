"""Exception types shared across the package."""


class FocusAttnError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(FocusAttnError, ValueError):
    """Operand shapes are inconsistent."""

    def __init__(self, message, *shapes):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)
        self.shapes = shapes


class ParameterError(FocusAttnError, ValueError):
    """A scalar parameter is out of its valid range."""


class DegenerateRowError(FocusAttnError, ValueError):
    """A softmax row has no finite entry."""


class OracleError(FocusAttnError, ArithmeticError):
    """The finite-difference oracle produced a non-finite value."""


class UnsupportedOpError(FocusAttnError, NotImplementedError):
    """A recorded primitive has no backward rule."""


class ConfigError(FocusAttnError, ValueError):
    """Invalid configuration document or decoder schedule."""
