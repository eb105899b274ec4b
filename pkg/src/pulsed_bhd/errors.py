"""Exception hierarchy shared by all modules."""


class BHDError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(BHDError, ValueError):
    """Invalid configuration key or value."""


class DataError(BHDError, ValueError):
    """Input data that cannot be processed (empty, malformed, inconsistent)."""


class PhaseUnresolvableError(DataError):
    """Segment means carry no phase information (e.g. vacuum or Fock input)."""


class NumericalError(BHDError, ArithmeticError):
    """A numerical procedure failed or produced an invalid result."""
