"""Exception taxonomy shared across the package."""


class TrigwardError(Exception):
    """Base class for package errors."""


class ConfigurationError(TrigwardError):
    """Unknown identifiers, invalid parameters, malformed configs."""


class SchemaError(ConfigurationError):
    """Config document failed schema validation; carries offending keys."""

    def __init__(self, message, keys=()):
        super().__init__(message)
        self.keys = tuple(keys)


class IngestionError(TrigwardError):
    """Dataset files missing or unreadable."""


class ContractError(TrigwardError):
    """Caller violated an operation precondition (shape, mode, emptiness)."""


class NumericError(TrigwardError):
    """Non-finite values encountered; carries diagnostics when available."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class FingerprintConflictError(TrigwardError):
    """Existing artifact was produced under a different configuration."""
