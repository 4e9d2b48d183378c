"""Exception hierarchy for the usability inspection pipeline."""

from __future__ import annotations


class UxInspectError(Exception):
    """Base class for all pipeline errors."""


class OverrideInvalid(UxInspectError):
    """Heuristic override document is malformed."""


class DimensionMismatch(UxInspectError):
    """Vectors of differing dimension were combined."""


class ZeroVector(UxInspectError):
    """Cosine similarity requested for a zero-magnitude vector."""


class AlignmentError(UxInspectError):
    """Issues and embedding vectors are not positionally aligned."""


# providers


class ProviderError(UxInspectError):
    """Base class for model provider failures."""


class CacheMiss(ProviderError):
    def __init__(self, key: str, kind: str = "chat") -> None:
        super().__init__(f"no recorded {kind} response for request {key}")
        self.key = key
        self.kind = kind


class TransportError(ProviderError):
    def __init__(self, message: str, *, status: int | None = None, retryable: bool = False) -> None:
        super().__init__(message)
        self.status = status
        self.retryable = retryable


class CredentialMissing(ProviderError):
    def __init__(self, env_var: str) -> None:
        super().__init__(f"environment variable {env_var!r} is not set")
        self.env_var = env_var


class AttachmentUnreadable(ProviderError):
    pass


# prompts


class TemplateError(UxInspectError):
    pass


class MissingVariable(TemplateError):
    def __init__(self, name: str, template_id: str = "") -> None:
        where = f" in template {template_id!r}" if template_id else ""
        super().__init__(f"missing variable <{name}>{where}")
        self.name = name


class ExtractionError(UxInspectError):
    """No usable JSON value could be pulled out of model output."""


class NoJsonFound(ExtractionError):
    pass


class MalformedJson(ExtractionError):
    pass


# pipeline stages


class SchemaError(UxInspectError):
    """Model output did not match the expected response schema."""


class BudgetExceeded(UxInspectError):
    pass


class StageError(UxInspectError):
    """A scenario failed in a given stage; wraps the underlying cause."""

    def __init__(self, scenario_id: str, stage: str, cause: BaseException, detail: str = "") -> None:
        msg = f"[{scenario_id}] {stage} failed"
        if detail:
            msg += f" ({detail})"
        super().__init__(f"{msg}: {cause}")
        self.scenario_id = scenario_id
        self.stage = stage
        self.cause = cause


# configuration


class ConfigError(UxInspectError):
    pass


class ConfigParse(ConfigError):
    pass


class ConfigInvalid(ConfigError):
    def __init__(self, field: str, reason: str) -> None:
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class VideoMissing(ConfigError):
    def __init__(self, path: object) -> None:
        super().__init__(f"recording not readable: {path}")
        self.path = path


class HeuristicFailed(UxInspectError):
    """Evaluation of one heuristic failed; aborts the scenario."""

    def __init__(self, heuristic: int, name: str, cause: BaseException) -> None:
        super().__init__(f"heuristic {heuristic} ({name}) failed: {cause}")
        self.heuristic = heuristic
        self.cause = cause
