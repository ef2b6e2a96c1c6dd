"""Exception types raised across the package."""


class SSOError(Exception):
    """Base class for all package errors."""


class ConfigError(SSOError, ValueError):
    """Invalid hyperparameters, run configuration or unknown environment."""


class TransportError(SSOError):
    """A chat or embedding endpoint could not be reached after retries."""


class CassetteMiss(TransportError):
    """A replay-mode request had no recorded response."""

    def __init__(self, request_hash: str):
        super().__init__(f"no cassette entry for request {request_hash}")
        self.request_hash = request_hash


class EmbeddingError(SSOError):
    """The embedding provider failed; carries the provider's diagnostic."""


class SkillSetLoadError(SSOError):
    """A persisted skill set is malformed."""

    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field


class ActorParseError(SSOError):
    """Model output did not contain a 'Next action:' line."""


class EnvError(SSOError):
    """Environment contract violation (e.g. stepping a finished episode)."""
