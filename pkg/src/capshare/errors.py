"""Exception hierarchy shared by every capshare module."""


class CapShareError(Exception):
    """Base class for all library errors."""


class DivisionByZeroResource(CapShareError):
    """An offloaded user needs a resource that was allocated as zero."""


class InfeasibleAllocation(CapShareError):
    """An allocation violates a budget, sign, or placement invariant."""


class MissingDeadline(CapShareError):
    """A deadline-aware routine was called on users without deadlines."""


class NumericalFailure(CapShareError):
    """The SDP solver stopped without meeting its tolerance."""


class ClampExceedsTolerance(CapShareError):
    """SDP marginals needed a correction larger than the allowed clamp."""


class DegenerateMarginals(CapShareError):
    """Joint probabilities vanish for every placement of a user."""


class TooLarge(CapShareError):
    """Exhaustive search was requested above the configured user cap."""


class ConfigError(CapShareError):
    """A configuration file could not be parsed or validated."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
