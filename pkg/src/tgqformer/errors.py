"""Exception classes shared across the package."""


class TGQError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class DimensionError(TGQError, ValueError):
    exit_code = 3


class ConfigurationError(TGQError, ValueError):
    exit_code = 2


class ContractError(TGQError, ValueError):
    exit_code = 4


class NumericError(TGQError, ArithmeticError):
    exit_code = 5


class StateError(TGQError, RuntimeError):
    exit_code = 6


class LookupFailure(TGQError, KeyError):
    exit_code = 7

    def __str__(self):
        return str(self.args[0]) if self.args else ""
