"""Exception types raised by wpstab."""


class WpstabError(Exception):
    """Base class for all library errors."""


class DomainError(WpstabError, ValueError):
    """An operation was evaluated outside its domain (pole node, bad parameter)."""


class GridMismatchError(WpstabError, ValueError):
    pass


class IntegrabilityError(WpstabError, ArithmeticError):
    """A volume integral does not converge at an endpoint."""


class SingularPerturbationError(WpstabError, ValueError):
    pass


class NotInvertibleError(WpstabError, ArithmeticError):
    pass


class PreconditionError(WpstabError, ValueError):
    pass


class NotFoundError(WpstabError, LookupError):
    """A requested Böhm branch was not located by the shooting scan."""

    def __init__(self, message, scan_report=None):
        super().__init__(message)
        self.scan_report = scan_report or []
