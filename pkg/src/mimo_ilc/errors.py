"""Exception hierarchy shared by all modules."""


class IlcError(Exception):
    """Base class for errors raised by this package."""


class InvalidArgument(IlcError, ValueError):
    pass


class NumericalError(IlcError, ArithmeticError):
    """A linear-algebra step could not be carried out reliably."""


class IllConditionedError(NumericalError):
    def __init__(self, message, condition_number=None):
        super().__init__(message)
        self.condition_number = condition_number


class RankDeficiencyError(NumericalError):
    def __init__(self, message, condition_number=None):
        super().__init__(message)
        self.condition_number = condition_number


class UnreachableError(IlcError, ValueError):
    """Requested tip position lies outside the arm workspace."""


class CertificationError(IlcError):
    """No in-band frequency admits a convergent iteration gain."""


class ConfigError(IlcError, ValueError):
    pass
