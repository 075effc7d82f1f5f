"""Exception hierarchy shared by all geocl modules."""


class GeoclError(Exception):
    """Base class for all geocl errors."""


class ConfigurationError(GeoclError):
    """Invalid configuration: bad slices, mismatched curvatures, unknown keys."""


class NumericalDomainError(GeoclError):
    """An operation left its numerical domain (NaN/Inf, vanishing denominator)."""


class DegenerateAngleError(GeoclError):
    """Angle requested between vectors with (numerically) zero norm."""


class ContractViolation(GeoclError):
    """A caller broke an API precondition."""
