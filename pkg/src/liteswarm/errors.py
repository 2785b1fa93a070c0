"""Exception hierarchy shared by every liteswarm module."""

from __future__ import annotations


class LiteSwarmError(Exception):
    """Base class for all liteswarm errors."""


# provider layer


class ProviderError(LiteSwarmError):
    pass


class TransportError(ProviderError):
    """Upstream unreachable or kept failing after all retries."""


class ProtocolError(ProviderError):
    """Upstream answered with something that is not a chat completion."""


class AuthError(ProviderError):
    """Upstream rejected the credentials (401/403). Never retried."""


class StreamInterrupted(ProviderError):
    """A stream ended without a finish_reason chunk."""


class NoDefaultRule(LiteSwarmError):
    pass


# memory


class EmptyText(LiteSwarmError, ValueError):
    pass


# tools


class DuplicateName(LiteSwarmError, ValueError):
    pass


class InvalidSpec(LiteSwarmError, ValueError):
    """A tool spec violates one of its invariants.

    ``field`` names the offending field and ``invariant`` the rule broken.
    """

    def __init__(self, message: str, field: str = "", invariant: str = ""):
        super().__init__(message)
        self.field = field
        self.invariant = invariant


class ArgumentError(LiteSwarmError, ValueError):
    """Base for tool-argument failures; ``str(err)`` is meant for the LLM."""

    def __init__(self, message: str, param: str | None = None):
        super().__init__(message)
        self.param = param


class MalformedArguments(ArgumentError):
    pass


class MissingRequired(ArgumentError):
    pass


class TypeMismatch(ArgumentError):
    pass


class UnknownParam(ArgumentError):
    pass


# agents / swarm


class InvalidConfig(LiteSwarmError, ValueError):
    pass


class IterationLimit(LiteSwarmError):
    pass


# tool generation


class EmptyInput(LiteSwarmError, ValueError):
    pass


class GenerationInvalid(LiteSwarmError):
    def __init__(self, message: str, errors: list[str]):
        super().__init__(message)
        self.errors = errors


class SpecParseError(LiteSwarmError, ValueError):
    pass


# gateway


class BindError(LiteSwarmError, OSError):
    pass


class ConfigError(LiteSwarmError, ValueError):
    """Engine config file is invalid; ``field`` is a dotted path to the culprit."""

    def __init__(self, message: str, field: str = ""):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field
