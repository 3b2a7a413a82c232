"""Exception types raised across the package."""


class NMFAlphaError(Exception):
    """Base class for all package errors."""


class DimensionError(NMFAlphaError, ValueError):
    """Operands have incompatible shapes."""


class DomainError(NMFAlphaError, ValueError):
    """A value lies outside the domain an operation accepts (e.g. a negative entry)."""


class ParameterError(NMFAlphaError, ValueError):
    """An option or hyper-parameter is invalid."""


class DegenerateLabelError(NMFAlphaError, ValueError):
    """Training labels do not contain both classes."""


class ParseError(NMFAlphaError, ValueError):
    """Malformed dataset or configuration text."""


class ArchiveError(NMFAlphaError, ValueError):
    """A model archive failed validation (version, checksum or payload)."""
