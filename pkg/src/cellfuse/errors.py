"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: :class:`DataError` -> 2,
:class:`NumericalError` -> 3.
"""


class CellfuseError(Exception):
    """Base class for all package errors."""


class DataError(CellfuseError, ValueError):
    """An input file or in-memory structure violates its contract."""


class LibraryError(DataError):
    pass


class NetlistError(DataError):
    pass


class SimulationError(DataError):
    pass


class CheckpointError(DataError):
    pass


class NumericalError(CellfuseError, ArithmeticError):
    """A NaN or infinity showed up in a loss, gradient or parameter."""
