"""Domain model: heuristics, scenarios, issues, reports and video token budgeting."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Sequence

from .errors import OverrideInvalid

DEFAULT_FPS = 1
DEFAULT_TOKENS_PER_FRAME = 258
DEFAULT_TEXT_RESERVE = 4096
DEFAULT_CONTEXT_LIMIT = 1_048_576


class HeuristicId(enum.IntEnum):
    VISIBILITY_OF_SYSTEM_STATUS = 1
    MATCH_SYSTEM_REAL_WORLD = 2
    USER_CONTROL_AND_FREEDOM = 3
    CONSISTENCY_AND_STANDARDS = 4
    ERROR_PREVENTION = 5
    RECOGNITION_RATHER_THAN_RECALL = 6
    FLEXIBILITY_AND_EFFICIENCY = 7
    AESTHETIC_AND_MINIMALIST_DESIGN = 8
    ERROR_RECOVERY = 9
    HELP_AND_DOCUMENTATION = 10


@dataclass(frozen=True)
class Heuristic:
    id: HeuristicId
    name: str
    guiding_question: str

    def __post_init__(self) -> None:
        if not self.name.strip() or not self.guiding_question.strip():
            raise ValueError(f"heuristic {int(self.id)} needs a name and a guiding question")


_DEFAULT_HEURISTICS: tuple[tuple[str, str], ...] = (
    (
        "Visibility of System Status",
        "Does the interface keep users informed about what is going on through timely feedback "
        "(e.g., loading indicators, progress, confirmations)?",
    ),
    (
        "Match Between System and the Real World",
        "Does the interface use words, concepts, and conventions familiar to the user rather than "
        "internal or technical jargon?",
    ),
    (
        "User Control and Freedom",
        "Can users easily undo or exit unwanted actions (e.g., cancel, back, undo)?",
    ),
    (
        "Consistency and Standards",
        "Are labels, controls, and interaction patterns consistent within the app and with "
        "platform conventions?",
    ),
    (
        "Error Prevention",
        "Does the design prevent errors before they happen (e.g., constraints, sensible defaults, "
        "confirmation before destructive actions)?",
    ),
    (
        "Recognition Rather Than Recall",
        "Are options, actions, and needed information visible so users do not have to remember "
        "them between steps?",
    ),
    (
        "Flexibility and Efficiency of Use",
        "Can frequent actions be completed quickly (e.g., shortcuts, defaults, fewer steps) "
        "without hindering novice users?",
    ),
    (
        "Aesthetic and Minimalist Design",
        "Is the interface free of irrelevant or rarely needed information that competes with "
        "what matters for the task?",
    ),
    (
        "Help Users Recognize, Diagnose, and Recover from Errors",
        "Are error messages expressed in plain language, do they pinpoint the problem, and do "
        "they suggest a way to fix it?",
    ),
    (
        "Help and Documentation",
        "Is help or guidance available in context when users need it to complete the task?",
    ),
)


def default_catalog() -> list[Heuristic]:
    return [
        Heuristic(HeuristicId(i), name, question)
        for i, (name, question) in enumerate(_DEFAULT_HEURISTICS, start=1)
    ]


def load_heuristic_catalog(source: str | Path | Sequence[dict[str, Any]] | None = None) -> list[Heuristic]:
    """Return the ten heuristics sorted by ordinal.

    ``source`` may be a path to a JSON override document, an already parsed
    list of entries, or None for the built-in catalog.
    """
    if source is None:
        return default_catalog()

    if isinstance(source, (str, Path)):
        try:
            entries = json.loads(Path(source).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise OverrideInvalid(f"cannot read heuristic override {source}: {exc}") from exc
    else:
        entries = source

    if not isinstance(entries, list):
        raise OverrideInvalid("heuristic override must be a JSON array")
    if len(entries) != len(HeuristicId):
        raise OverrideInvalid(f"expected {len(HeuristicId)} heuristics, got {len(entries)}")

    catalog: dict[HeuristicId, Heuristic] = {}
    for entry in entries:
        if not isinstance(entry, dict):
            raise OverrideInvalid("each heuristic entry must be an object")
        raw_id = entry.get("id")
        if isinstance(raw_id, bool) or not isinstance(raw_id, int) or not 1 <= raw_id <= 10:
            raise OverrideInvalid(f"heuristic id must be an integer in 1..10, got {raw_id!r}")
        hid = HeuristicId(raw_id)
        if hid in catalog:
            raise OverrideInvalid(f"duplicate heuristic id {raw_id}")
        name = entry.get("name")
        question = entry.get("guiding_question")
        if not isinstance(name, str) or not name.strip():
            raise OverrideInvalid(f"heuristic {raw_id}: empty name")
        if not isinstance(question, str) or not question.strip():
            raise OverrideInvalid(f"heuristic {raw_id}: empty guiding_question")
        catalog[hid] = Heuristic(hid, name, question)

    return [catalog[hid] for hid in sorted(catalog)]


def heuristic_names(catalog: Iterable[Heuristic]) -> dict[HeuristicId, str]:
    return {h.id: h.name for h in catalog}


@dataclass(frozen=True)
class AppProfile:
    name: str
    description: str

    def __post_init__(self) -> None:
        if not self.description.strip():
            raise ValueError("app description must not be empty")


@dataclass(frozen=True)
class VideoRef:
    path: Path
    duration_seconds: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.duration_seconds) or self.duration_seconds < 0:
            raise ValueError(f"duration must be a non-negative number, got {self.duration_seconds}")


@dataclass(frozen=True)
class TaskScenario:
    id: str
    persona: str
    task_instruction: str
    recording: VideoRef

    def __post_init__(self) -> None:
        if not self.persona.strip() or not self.task_instruction.strip():
            raise ValueError(f"scenario {self.id!r}: persona and task_instruction are required")


@dataclass(frozen=True)
class RawIssue:
    scenario_id: str
    heuristic: HeuristicId
    description: str
    recommendation: str

    def __post_init__(self) -> None:
        if not self.description.strip() or not self.recommendation.strip():
            raise ValueError("issue description and recommendation must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario_id": self.scenario_id,
            "heuristic": int(self.heuristic),
            "description": self.description,
            "recommendation": self.recommendation,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RawIssue:
        return cls(
            scenario_id=data["scenario_id"],
            heuristic=HeuristicId(data["heuristic"]),
            description=data["description"],
            recommendation=data["recommendation"],
        )


@dataclass(frozen=True)
class AggregatedIssue:
    scenario_id: str
    summary: str
    recommendation_summary: str
    members: tuple[RawIssue, ...]
    violated_heuristics: frozenset[HeuristicId] = field(default=frozenset())

    def __post_init__(self) -> None:
        if not self.members:
            raise ValueError("an aggregated issue needs at least one member")
        union = frozenset(m.heuristic for m in self.members)
        if not self.violated_heuristics:
            object.__setattr__(self, "violated_heuristics", union)
        elif self.violated_heuristics != union:
            raise ValueError("violated_heuristics must equal the union of member heuristics")

    @property
    def member_count(self) -> int:
        return len(self.members)

    @property
    def sorted_heuristics(self) -> list[HeuristicId]:
        return sorted(self.violated_heuristics)

    @classmethod
    def from_members(
        cls, members: Sequence[RawIssue], summary: str, recommendation_summary: str
    ) -> AggregatedIssue:
        members = tuple(members)
        if not members:
            raise ValueError("an aggregated issue needs at least one member")
        return cls(
            scenario_id=members[0].scenario_id,
            summary=summary,
            recommendation_summary=recommendation_summary,
            members=members,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario_id": self.scenario_id,
            "summary": self.summary,
            "recommendation_summary": self.recommendation_summary,
            "violated_heuristics": [int(h) for h in self.sorted_heuristics],
            "member_count": self.member_count,
            "members": [m.to_dict() for m in self.members],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> AggregatedIssue:
        issue = cls.from_members(
            [RawIssue.from_dict(m) for m in data["members"]],
            data["summary"],
            data["recommendation_summary"],
        )
        if "violated_heuristics" in data:
            declared = frozenset(HeuristicId(h) for h in data["violated_heuristics"])
            if declared != issue.violated_heuristics:
                raise ValueError("violated_heuristics disagrees with members")
        if data.get("member_count", issue.member_count) != issue.member_count:
            raise ValueError("member_count disagrees with members")
        return issue


@dataclass(frozen=True)
class RankedIssue:
    rank: int
    issue: AggregatedIssue
    rationale: str | None = None

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise ValueError("rank must be >= 1")


@dataclass(frozen=True)
class Provenance:
    chat_model: str
    embedding_model: str
    similarity_threshold: float
    pipeline_version: str
    created_at: str
    ranking_mode: str

    def __post_init__(self) -> None:
        for name in ("chat_model", "embedding_model", "pipeline_version", "created_at", "ranking_mode"):
            if not getattr(self, name):
                raise ValueError(f"provenance.{name} must be non-empty")


@dataclass(frozen=True)
class EvaluationReport:
    app: AppProfile
    scenario: TaskScenario
    ranked: tuple[RankedIssue, ...]
    provenance: Provenance

    def __post_init__(self) -> None:
        ranks = [r.rank for r in self.ranked]
        if ranks != list(range(1, len(ranks) + 1)):
            raise ValueError(f"ranks must be 1..N in ascending order, got {ranks}")


# --- video token budgeting -------------------------------------------------


def _exact(x: float | int) -> Fraction:
    # via repr so 0.1 means one tenth, not its binary neighbour
    return Fraction(repr(x)) if isinstance(x, float) else Fraction(x)


def estimate_video_tokens(
    duration_seconds: float,
    fps: float = DEFAULT_FPS,
    tokens_per_frame: int = DEFAULT_TOKENS_PER_FRAME,
) -> int:
    """Tokens a recording consumes when sampled at ``fps``: ceil(duration * fps) frames."""
    if duration_seconds < 0:
        raise ValueError("duration must be non-negative")
    if fps <= 0 or tokens_per_frame <= 0:
        raise ValueError("fps and tokens_per_frame must be positive")
    frames = math.ceil(_exact(duration_seconds) * _exact(fps))
    return frames * tokens_per_frame


@dataclass(frozen=True)
class BudgetVerdict:
    estimated_tokens: int
    context_limit: int
    reserve: int
    excess: int = 0

    @property
    def ok(self) -> bool:
        return self.excess == 0

    @property
    def status(self) -> str:
        return "ok" if self.ok else "over_budget"


def check_context_budget(
    estimated_tokens: int, context_limit: int, reserve: int = DEFAULT_TEXT_RESERVE
) -> BudgetVerdict:
    needed = estimated_tokens + reserve
    return BudgetVerdict(
        estimated_tokens=estimated_tokens,
        context_limit=context_limit,
        reserve=reserve,
        excess=max(0, needed - context_limit),
    )


@dataclass(frozen=True)
class TokenBudget:
    """Context-window settings applied to each recording."""

    context_limit: int = DEFAULT_CONTEXT_LIMIT
    text_reserve: int = DEFAULT_TEXT_RESERVE
    fps: float = DEFAULT_FPS
    tokens_per_frame: int = DEFAULT_TOKENS_PER_FRAME

    def check(self, video: VideoRef) -> BudgetVerdict:
        tokens = estimate_video_tokens(video.duration_seconds, self.fps, self.tokens_per_frame)
        return check_context_budget(tokens, self.context_limit, self.text_reserve)


def parse_clock(value: str) -> float:
    """Parse ``"mm:ss"`` or ``"hh:mm:ss"`` into seconds."""
    parts = value.strip().split(":")
    if not 2 <= len(parts) <= 3 or not all(p.isdigit() for p in parts):
        raise ValueError(f"not a clock duration: {value!r}")
    seconds = 0
    for p in parts:
        seconds = seconds * 60 + int(p)
    return float(seconds)


def format_clock(seconds: float) -> str:
    total = math.ceil(seconds)
    h, rem = divmod(total, 3600)
    m, s = divmod(rem, 60)
    return f"{h:d}:{m:02d}:{s:02d}" if h else f"{m:02d}:{s:02d}"
