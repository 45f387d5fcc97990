"""Exception hierarchy shared by every module."""


class XRestormerError(Exception):
    pass


class ShapeError(XRestormerError, ValueError):
    """Incompatible tensor extents."""


class ConfigError(XRestormerError, ValueError):
    """Invalid hyperparameters or configuration text."""


class ContractError(XRestormerError, ValueError):
    """A precondition of an operation was violated."""


class NumericError(XRestormerError, ArithmeticError):
    """NaN or infinite values where finite ones are required."""
