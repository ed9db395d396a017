"""Exception hierarchy shared by all modules."""


class EnlargeSimError(Exception):
    """Base class for package errors."""


class ConfigurationError(EnlargeSimError, ValueError):
    """Invalid or missing configuration field."""


class DomainError(EnlargeSimError, ValueError):
    """Argument outside the domain where an operation is defined."""


class ModelError(EnlargeSimError, ValueError):
    """Model inputs that violate a structural assumption (negative rate, non-monotone clock, ...)."""


class StructuralError(EnlargeSimError, ValueError):
    """Incompatible grids, shapes or filtrations."""


class StatisticalPowerError(EnlargeSimError, ValueError):
    """Batch too small for the requested statistical test."""
