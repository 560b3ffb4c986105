# Exceptions raised by the relay simulator


class RelaySimError(Exception):
    """Base class for every error raised by this package."""


class DomainError(RelaySimError, ValueError):
    """An argument lies outside the domain of a model function (e.g. t <= 0)."""


class ModelValidityError(RelaySimError):
    """The uniform-concentration observation model does not hold for this geometry."""


class ConfigError(RelaySimError):
    """Invalid or incomplete configuration. Carries the offending line and field when known."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        self.detail = message
        prefix = []
        if line is not None:
            prefix.append(f"line {line}")
        if field is not None:
            prefix.append(f"field '{field}'")
        if prefix:
            message = f"{', '.join(prefix)}: {message}"
        super().__init__(message)


class UnsupportedConfigurationError(RelaySimError):
    """The requested computation is undefined for this configuration."""


class InvalidProtocolError(RelaySimError):
    """The protocol cannot perform the requested role (e.g. relaying in the baseline case)."""
