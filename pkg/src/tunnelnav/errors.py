"""Exception types shared across the simulator."""


class TunnelNavError(Exception):
    """Base class for all errors raised by this package."""


class InvalidSpecError(TunnelNavError, ValueError):
    """A tunnel or parameter specification violates its invariants."""


class QueryError(TunnelNavError, ValueError):
    """A geometric query was made from outside free space."""


class NumericError(TunnelNavError, ArithmeticError):
    """Non-finite values appeared in a numerical computation."""


class BoundsError(TunnelNavError, IndexError):
    """A point or cell lies outside the occupancy grid."""


class ContractError(TunnelNavError, ValueError):
    """A call violated an ordering or shape contract."""


class ConfigError(TunnelNavError, ValueError):
    """A configuration file could not be parsed or validated."""
