"""Exception types shared across the library."""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class ParameterError(ValueError):
    """An argument value is invalid (non-divisor partition, bad scale, ...)."""


class IntegrityError(ValueError):
    """A structural invariant is violated (e.g. a non-bijective index map)."""


class ResourceError(RuntimeError):
    """A dense materialization would exceed the configured size cap."""
