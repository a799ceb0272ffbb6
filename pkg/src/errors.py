"""
Error Types
Exception hierarchy shared by every fxdarts module.

Library code raises these; only the command-line entry point catches them,
logs the diagnostic and exits with a non-zero status.
"""


class FxDartsError(Exception):
    """Base class for all fxdarts errors."""


class ShapeError(FxDartsError, ValueError):
    """A tensor did not have the shape an operation expects."""


class NumericalError(FxDartsError, ArithmeticError):
    """Non-finite values appeared where finite values are required."""


class DeadNodeError(FxDartsError):
    """A computing node has no alive incoming (predecessor, operator) entry."""


class GenotypeError(FxDartsError, ValueError):
    """A genotype violates its structural invariants."""


class CheckpointError(FxDartsError):
    """A checkpoint file is unreadable, malformed or of an unknown version."""


class ConfigError(FxDartsError, ValueError):
    """A configuration value is missing or out of range."""
