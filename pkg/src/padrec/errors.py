"""Error taxonomy shared across the package.

CLI exit-code mapping: UsageError (and subclasses) -> 1, InvariantError
(and subclasses) -> 2, OSError -> 3.
"""


class PadrecError(Exception):
    """Base class for all package-raised errors."""


class UsageError(PadrecError):
    """Bad input supplied by the caller: arguments, configs, capacities."""


class ConfigError(UsageError):
    """Inconsistent or out-of-range configuration (vocab/checkpoint mismatch, depth > table)."""


class CapacityError(UsageError):
    """A requested size exceeds what the token/id space can hold."""


class InvariantError(PadrecError):
    """An internal contract was violated; indicates a bug, not user error."""


class ShapeError(InvariantError):
    """Tensor dimensions incompatible with the requested operation."""


class RangeError(InvariantError):
    """Index or length outside the legal range (cache overflow, id out of vocab)."""


class StructureError(InvariantError):
    """Malformed tree/mask structure (child before parent, detached path)."""
