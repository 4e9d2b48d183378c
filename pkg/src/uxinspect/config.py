"""Run configuration: a single JSON document, paths relative to its directory."""

from __future__ import annotations

import json
import logging
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .core import (
    DEFAULT_CONTEXT_LIMIT,
    DEFAULT_FPS,
    DEFAULT_TEXT_RESERVE,
    DEFAULT_TOKENS_PER_FRAME,
    AppProfile,
    TaskScenario,
    TokenBudget,
    VideoRef,
    parse_clock,
)
from .errors import ConfigInvalid, ConfigParse, VideoMissing
from .media import probe_mp4_duration
from .providers import ProviderConfig, RetryPolicy

log = logging.getLogger(__name__)

SCENARIO_ID = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]*(/[A-Za-z0-9][A-Za-z0-9_.-]*)*$")
REPORT_FORMATS = ("json", "markdown")


@dataclass(frozen=True)
class AggregationSettings:
    similarity_threshold: float = 0.7
    embed_recommendations: bool = False


@dataclass(frozen=True)
class EvaluationSettings:
    parallelism: int = 4
    context_limit: int = DEFAULT_CONTEXT_LIMIT
    text_reserve: int = DEFAULT_TEXT_RESERVE
    fps: float = DEFAULT_FPS
    tokens_per_frame: int = DEFAULT_TOKENS_PER_FRAME

    @property
    def budget(self) -> TokenBudget:
        return TokenBudget(self.context_limit, self.text_reserve, self.fps, self.tokens_per_frame)


@dataclass(frozen=True)
class ReportSettings:
    top_k: int | None = None
    formats: tuple[str, ...] = REPORT_FORMATS


@dataclass(frozen=True)
class RunConfig:
    app: AppProfile
    scenarios: tuple[TaskScenario, ...]
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    aggregation: AggregationSettings = field(default_factory=AggregationSettings)
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)
    report: ReportSettings = field(default_factory=ReportSettings)
    templates_dir: Path | None = None
    heuristics_override: Path | None = None
    cache_dir: Path = Path("cache")
    out_dir: Path = Path("reports")

    def scenario(self, scenario_id: str) -> TaskScenario:
        for s in self.scenarios:
            if s.id == scenario_id:
                return s
        raise KeyError(scenario_id)


# --- field readers -----------------------------------------------------------


def _section(doc: dict[str, Any], name: str, allowed: set[str]) -> dict[str, Any]:
    value = doc.get(name, {})
    if not isinstance(value, dict):
        raise ConfigInvalid(name, "must be an object")
    unknown = set(value) - allowed
    if unknown:
        raise ConfigInvalid(f"{name}.{sorted(unknown)[0]}", "unknown key")
    return value


def _text(obj: dict[str, Any], key: str, where: str, *, required: bool = True, default: str = "") -> str:
    value = obj.get(key, None)
    if value is None:
        if required:
            raise ConfigInvalid(where, "is required")
        return default
    if not isinstance(value, str) or (required and not value.strip()):
        raise ConfigInvalid(where, "must be a non-empty string")
    return value


def _int(obj: dict[str, Any], key: str, where: str, default: int, minimum: int) -> int:
    value = obj.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigInvalid(where, "must be an integer")
    if value < minimum:
        raise ConfigInvalid(where, f"must be >= {minimum}")
    return value


def _number(obj: dict[str, Any], key: str, where: str, default: float) -> float:
    value = obj.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigInvalid(where, "must be a number")
    return float(value)


def _path(base: Path, value: Any, where: str) -> Path:
    if not isinstance(value, str) or not value:
        raise ConfigInvalid(where, "must be a path string")
    p = Path(value)
    return p if p.is_absolute() else base / p


def _provider(doc: dict[str, Any]) -> ProviderConfig:
    allowed = {
        "chat_endpoint", "chat_model_id", "embed_endpoint", "embed_model_id", "api_key_env",
        "timeout_seconds", "retry", "chat_protocol", "embed_protocol", "api_key",
    }
    sec = _section(doc, "provider", allowed)
    if "api_key" in sec:
        raise ConfigInvalid("provider.api_key", "credentials are read from the environment; set api_key_env")
    defaults = ProviderConfig()
    retry_doc = sec.get("retry", {})
    if not isinstance(retry_doc, dict):
        raise ConfigInvalid("provider.retry", "must be an object")
    unknown = set(retry_doc) - {"max_attempts", "base_backoff_ms", "jitter"}
    if unknown:
        raise ConfigInvalid(f"provider.retry.{sorted(unknown)[0]}", "unknown key")
    jitter = retry_doc.get("jitter", defaults.retry.jitter)
    if not isinstance(jitter, bool):
        raise ConfigInvalid("provider.retry.jitter", "must be a boolean")
    retry = RetryPolicy(
        max_attempts=_int(retry_doc, "max_attempts", "provider.retry.max_attempts", defaults.retry.max_attempts, 1),
        base_backoff_ms=_int(
            retry_doc, "base_backoff_ms", "provider.retry.base_backoff_ms", defaults.retry.base_backoff_ms, 0
        ),
        jitter=jitter,
    )
    protocols = {}
    for key in ("chat_protocol", "embed_protocol"):
        value = sec.get(key, getattr(defaults, key))
        if value not in ("gemini", "openai"):
            raise ConfigInvalid(f"provider.{key}", "must be 'gemini' or 'openai'")
        protocols[key] = value
    return ProviderConfig(
        chat_endpoint=_text(sec, "chat_endpoint", "provider.chat_endpoint", required=False, default=defaults.chat_endpoint),
        chat_model_id=_text(sec, "chat_model_id", "provider.chat_model_id", required=False, default=defaults.chat_model_id),
        embed_endpoint=_text(sec, "embed_endpoint", "provider.embed_endpoint", required=False, default=defaults.embed_endpoint),
        embed_model_id=_text(sec, "embed_model_id", "provider.embed_model_id", required=False, default=defaults.embed_model_id),
        api_key_env=_text(sec, "api_key_env", "provider.api_key_env", required=False, default=defaults.api_key_env),
        timeout_seconds=_int(sec, "timeout_seconds", "provider.timeout_seconds", defaults.timeout_seconds, 1),
        retry=retry,
        **protocols,
    )


def _recording(base: Path, doc: Any, where: str) -> VideoRef:
    if isinstance(doc, str):
        doc = {"path": doc}
    if not isinstance(doc, dict):
        raise ConfigInvalid(where, "must be an object or a path")
    unknown = set(doc) - {"path", "duration_seconds", "duration"}
    if unknown:
        raise ConfigInvalid(f"{where}.{sorted(unknown)[0]}", "unknown key")
    path = _path(base, doc.get("path"), f"{where}.path")
    if not path.is_file() or not os.access(path, os.R_OK):
        raise VideoMissing(path)

    declared: float | None = None
    if "duration_seconds" in doc:
        declared = _number(doc, "duration_seconds", f"{where}.duration_seconds", 0.0)
    elif "duration" in doc:
        try:
            declared = parse_clock(str(doc["duration"]))
        except ValueError as exc:
            raise ConfigInvalid(f"{where}.duration", str(exc)) from None
    if declared is not None and declared < 0:
        raise ConfigInvalid(f"{where}.duration_seconds", "must be non-negative")

    probed = probe_mp4_duration(path)
    if declared is not None:
        if probed is not None:
            log.warning(
                "%s: declared duration %.1fs used; probed value was %.1fs", path.name, declared, probed
            )
        return VideoRef(path, declared)
    if probed is None:
        raise ConfigInvalid(f"{where}.duration_seconds", "not declared and could not be probed from the file")
    return VideoRef(path, probed)


def parse_config(doc: Any, base_dir: Path) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigInvalid("<root>", "config must be a JSON object")
    allowed = {
        "app", "scenarios", "provider", "aggregation", "evaluation", "report",
        "templates_dir", "heuristics_override", "cache_dir", "out_dir",
    }
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigInvalid(sorted(unknown)[0], "unknown key")

    app_doc = _section(doc, "app", {"name", "description"})
    app = AppProfile(
        name=_text(app_doc, "name", "app.name"),
        description=_text(app_doc, "description", "app.description"),
    )

    raw_scenarios = doc.get("scenarios")
    if not isinstance(raw_scenarios, list) or not raw_scenarios:
        raise ConfigInvalid("scenarios", "at least one scenario is required")
    scenarios = []
    seen: set[str] = set()
    for i, sdoc in enumerate(raw_scenarios):
        where = f"scenarios[{i}]"
        if not isinstance(sdoc, dict):
            raise ConfigInvalid(where, "must be an object")
        unknown = set(sdoc) - {"id", "persona", "task_instruction", "recording"}
        if unknown:
            raise ConfigInvalid(f"{where}.{sorted(unknown)[0]}", "unknown key")
        sid = _text(sdoc, "id", f"{where}.id")
        if not SCENARIO_ID.match(sid):
            raise ConfigInvalid("scenarios.id", f"{sid!r} is not a valid slug")
        if sid in seen:
            raise ConfigInvalid("scenarios.id", f"duplicate scenario id {sid!r}")
        seen.add(sid)
        scenarios.append(
            TaskScenario(
                id=sid,
                persona=_text(sdoc, "persona", f"{where}.persona"),
                task_instruction=_text(sdoc, "task_instruction", f"{where}.task_instruction"),
                recording=_recording(base_dir, sdoc.get("recording"), f"{where}.recording"),
            )
        )

    agg_doc = _section(doc, "aggregation", {"similarity_threshold", "embed_recommendations"})
    threshold = _number(agg_doc, "similarity_threshold", "aggregation.similarity_threshold", 0.7)
    if not 0.0 < threshold <= 1.0:
        raise ConfigInvalid("aggregation.similarity_threshold", "must be in (0, 1]")
    embed_recs = agg_doc.get("embed_recommendations", False)
    if not isinstance(embed_recs, bool):
        raise ConfigInvalid("aggregation.embed_recommendations", "must be a boolean")

    ev_doc = _section(doc, "evaluation", {"parallelism", "context_limit", "text_reserve", "fps", "tokens_per_frame"})
    fps = _number(ev_doc, "fps", "evaluation.fps", DEFAULT_FPS)
    if fps <= 0:
        raise ConfigInvalid("evaluation.fps", "must be positive")
    evaluation = EvaluationSettings(
        parallelism=_int(ev_doc, "parallelism", "evaluation.parallelism", 4, 1),
        context_limit=_int(ev_doc, "context_limit", "evaluation.context_limit", DEFAULT_CONTEXT_LIMIT, 1),
        text_reserve=_int(ev_doc, "text_reserve", "evaluation.text_reserve", DEFAULT_TEXT_RESERVE, 0),
        fps=fps,
        tokens_per_frame=_int(ev_doc, "tokens_per_frame", "evaluation.tokens_per_frame", DEFAULT_TOKENS_PER_FRAME, 1),
    )

    rep_doc = _section(doc, "report", {"top_k", "formats"})
    top_k = rep_doc.get("top_k")
    if top_k is not None:
        top_k = _int(rep_doc, "top_k", "report.top_k", 1, 1)
    formats = rep_doc.get("formats", list(REPORT_FORMATS))
    if (
        not isinstance(formats, list)
        or not formats
        or any(f not in REPORT_FORMATS for f in formats)
    ):
        raise ConfigInvalid("report.formats", f"must be a non-empty subset of {list(REPORT_FORMATS)}")

    optional_paths = {}
    for key in ("templates_dir", "heuristics_override"):
        optional_paths[key] = _path(base_dir, doc[key], key) if doc.get(key) is not None else None

    return RunConfig(
        app=app,
        scenarios=tuple(scenarios),
        provider=_provider(doc),
        aggregation=AggregationSettings(threshold, embed_recs),
        evaluation=evaluation,
        report=ReportSettings(top_k, tuple(f for f in REPORT_FORMATS if f in formats)),
        cache_dir=_path(base_dir, doc.get("cache_dir", "cache"), "cache_dir"),
        out_dir=_path(base_dir, doc.get("out_dir", "reports"), "out_dir"),
        **optional_paths,
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigParse(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except ValueError as exc:
        raise ConfigParse(f"{path}: invalid JSON: {exc}") from exc
    try:
        return parse_config(doc, path.resolve().parent)
    except ValueError as exc:
        raise ConfigInvalid("<config>", str(exc)) from exc
