"""Exception hierarchy shared by every module."""


class DoubleBootError(Exception):
    """Base class for all package errors."""


class DataError(DoubleBootError):
    """Input data violates a panel invariant."""


class TooFewObservations(DataError):
    pass


class DegenerateVariance(DataError):
    pass


class RankDeficient(DataError):
    pass


class PositivityViolation(DoubleBootError):
    """A selected 'true' strategy has a non-positive bootstrapped effect."""


class NoTrueStrategies(DoubleBootError):
    pass


class InsufficientIterations(DoubleBootError):
    pass


class BudgetExceeded(DoubleBootError):
    """Requested Monte Carlo work exceeds the configured budget."""


class AllFundsFiltered(DataError):
    pass


class ConfigError(DoubleBootError):
    pass


class ParseError(DataError):
    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class DuplicateIdentifier(DataError):
    pass
