"""Exception hierarchy shared by every stage of the toolkit."""


class MmpointError(Exception):
    """Base class for all toolkit errors."""


class DomainError(MmpointError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class SchemaError(MmpointError, ValueError):
    """A structured document does not match its schema.

    ``key`` names the offending entry (dotted path) when one is known.
    """

    def __init__(self, message: str, key: str | None = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class ValidationError(SchemaError):
    """A document parsed but a value violates a type invariant."""


class UnsupportedLayoutError(DomainError):
    """The virtual array geometry does not support the requested transform."""


class AnalysisError(MmpointError):
    """A derived quantity cannot be measured from the data given."""
