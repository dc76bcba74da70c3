"""Error taxonomy shared by the library, the CLI, and the HTTP service.

Every error carries a short machine-readable ``code`` so the CLI and the
service can emit the same ``{"error": {"code", "message"}}`` envelope.
"""

from __future__ import annotations


class MldocError(Exception):
    """Base class for all engine errors."""

    code = "internal"


class ConfigurationError(MldocError):
    """Invalid or missing configuration (bad params, unknown tokenizer, absent endpoint)."""

    code = "configuration"


class InputError(MldocError):
    """Malformed caller input: bad bundle, unknown node id, dimension mismatch."""

    code = "invalid_input"


class ProtocolError(MldocError):
    """A model endpoint replied with a body that does not match the wire contract."""

    code = "protocol"


class GatewayError(MldocError):
    """Transport-level failure talking to a model endpoint, after retries."""

    code = "gateway"

    def __init__(self, message: str, attempts: list[str] | None = None):
        super().__init__(message)
        # one line per attempt, kept for diagnostics
        self.attempts = attempts or []


class CapabilityError(GatewayError):
    """The endpoint rejected an input kind it does not support (e.g. images)."""

    code = "capability"


class ContextOverflowError(GatewayError):
    """The chat endpoint rejected the request for exceeding its context window."""

    code = "context_overflow"


class GenerationParseError(MldocError):
    """Model output for query generation contained no usable JSON array."""

    code = "generation_parse"

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class JudgeParseError(MldocError):
    """Judge output could not be mapped to a binary score."""

    code = "judge_parse"

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class StoreError(MldocError):
    """Problem writing or reading a persisted store."""

    code = "store"


class LoadError(StoreError):
    """Persisted store failed validation (version or checksum mismatch)."""

    code = "store_load"


class MissingStoreError(StoreError):
    """A required store artifact does not exist yet."""

    code = "store_missing"
