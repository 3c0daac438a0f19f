"""Exception hierarchy shared across the package.

The CLI maps :class:`ConfigError` to exit code 2 and :class:`NumericalError`
to exit code 3.
"""


class OpevalError(Exception):
    pass


class ConfigError(OpevalError, ValueError):
    pass


class NumericalError(OpevalError, ArithmeticError):
    pass


class SingularSystemError(NumericalError):
    def __init__(self, message, condition_number=float("inf")):
        super().__init__(f"{message} (condition estimate {condition_number:.3e})")
        self.condition_number = condition_number


class ChainError(NumericalError):
    """The policy-induced state chain is reducible or periodic."""
