"""
Error types raised by the positivization library
"""


class PositivizeError(Exception):
    """Base class for all errors raised by this package"""


class DimensionError(PositivizeError, ValueError):
    """Tensor extents or configuration lengths do not match"""


class NumericError(PositivizeError, ArithmeticError):
    """
    Non-finite values appeared in a numerical routine

    Args:
        message (str): Description of the failure
        param_index (int, optional): Offending circuit parameter, if known
    """

    def __init__(self, message, param_index=None):
        super().__init__(message)
        self.param_index = param_index


class NormalizationError(NumericError):
    """A state expected to be normalized is not"""


class SolverError(PositivizeError, RuntimeError):
    """
    The eigensolver failed to converge

    Args:
        message (str): Description of the failure
        residual (float, optional): Residual norm of the best available eigenpair
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class CircuitError(PositivizeError, ValueError):
    """Invalid gate parameters or circuit layout"""


class ConfigError(PositivizeError, ValueError):
    """Invalid or unreadable configuration"""
