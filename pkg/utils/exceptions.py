class SlateEngineError(Exception):
    """Base class for every error raised by the slate engine."""


class InvalidInstanceError(SlateEngineError):
    """Instance parameters violate the model (e.g. a zero budget)."""


class ConfigError(SlateEngineError):
    """A process, sweep or run configuration is unusable."""


class ContractViolationError(SlateEngineError):
    """A caller broke an operation's precondition."""


class OracleContractError(SlateEngineError):
    """A query oracle returned something its contract forbids."""


class InfeasibleAssignmentError(SlateEngineError):
    """No balanced assignment exists for the given slate."""


class GuaranteeViolationError(SlateEngineError):
    """A run produced a witness the proven guarantee rules out."""


class DatasetError(SlateEngineError):
    """Dataset files are missing, malformed or too small."""


class CacheMissError(SlateEngineError):
    """Replay mode needed a response that is not in the cache."""

    def __init__(self, key: str, description: str = ""):
        self.key = key
        super().__init__(f"No cached response for key {key} {description}".strip())


class TransportError(SlateEngineError):
    """The LLM endpoint kept failing after all retries."""


class ScoringError(SlateEngineError):
    """An LLM answer could not be turned into a score."""


class GenerationError(SlateEngineError):
    """An LLM answer could not be turned into a statement."""
