"""Exception types raised across the package."""


class DomainError(ValueError):
    """A point or configuration is incompatible with the domain."""


class DimensionMismatchError(DomainError):
    pass


class NumericFloorError(FloatingPointError):
    """A quantity needed as a divisor fell below its numeric floor.

    Raised instead of returning ``inf``/``nan`` when, e.g., the survival
    probability underflows or the eigenfunction vanishes at a query point.
    """


class ConfigError(ValueError):
    pass


class RefinementAbort(RuntimeError):
    """Every particle exited in one step even after repeated dt refinement."""


class InsufficientDataError(ValueError):
    pass


class IncompleteSpineError(ValueError):
    pass
