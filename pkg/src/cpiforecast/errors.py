"""Exception hierarchy shared by every module.

The CLI maps :class:`DataError` to exit status 1 and :class:`NumericalError`
to exit status 2.
"""


class CpiForecastError(Exception):
    pass


class DataError(CpiForecastError, ValueError):
    """Bad input data: malformed CSV, gaps, missing values, wrong shapes."""


class NumericalError(CpiForecastError, ArithmeticError):
    """Estimation or filtering failed numerically."""


class ConvergenceError(NumericalError):
    pass
