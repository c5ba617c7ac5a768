"""Shared exception types."""


class CtGraphError(Exception):
    """Base class for library errors."""


class ShapeError(CtGraphError, ValueError):
    """Operands have incompatible shapes or dimensions."""


class FormatError(CtGraphError, ValueError):
    """A container file is malformed, truncated, or uses an unknown dtype."""


class ValidationError(CtGraphError, ValueError):
    """A domain object violates its invariants."""


class ConfigError(CtGraphError, ValueError):
    """A configuration is missing, unreadable, or inconsistent."""
