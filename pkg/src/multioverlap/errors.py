"""Shared exception types, mapped to CLI exit codes by the front end."""


class ValidationError(ValueError):
    """A parameter, config key, or input object violates its contract."""


class CapacityError(RuntimeError):
    """A size cap was exceeded (enumeration width, reduction order, series length)."""


class CorruptRealizationError(ValidationError):
    """A disorder realization is structurally inconsistent (e.g. site index out of range)."""
