"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: config errors -> 1, data errors -> 2,
numerical failures -> 3.
"""


class AdvBiasError(Exception):
    """Base class for all package errors."""


class ConfigError(AdvBiasError, ValueError):
    pass


class DataError(AdvBiasError, ValueError):
    pass


class NumericalError(AdvBiasError, ArithmeticError):
    """Raised on divergence (non-finite loss or parameters)."""


class InfeasibleLP(NumericalError):
    pass


class UnboundedLP(NumericalError):
    pass


class FeasibleSetExhausted(AdvBiasError, RuntimeError):
    pass
