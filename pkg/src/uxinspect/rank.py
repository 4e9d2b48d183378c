"""Severity ordering of a scenario's aggregated issues."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Literal, Mapping, Sequence

from .core import AggregatedIssue, AppProfile, HeuristicId, RankedIssue, TaskScenario, default_catalog
from .errors import SchemaError
from .prompts import TemplateSet
from .providers import ChatRequest, ModelClient
from .structured import ask_json

log = logging.getLogger(__name__)

RankingMode = Literal["model", "model-repaired", "single-issue", "no-issues", "unranked-fallback"]


@dataclass(frozen=True)
class OrderVerdict:
    status: Literal["valid", "repaired", "unrepairable"]
    order: tuple[int, ...] = ()


def _as_index(value: Any) -> int | None:
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value
    if isinstance(value, str) and value.strip().isdigit():
        return int(value.strip())
    return None


def validate_order(order: Any, n: int) -> OrderVerdict:
    """Check that ``order`` is a permutation of 0..n-1, repairing it if possible.

    Repair keeps the first occurrence of each in-range index in the given
    order and appends the missing indices ascending.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not isinstance(order, (list, tuple)):
        return OrderVerdict("unrepairable")
    indices = [_as_index(v) for v in order]
    if len(order) == n and all(i is not None for i in indices) and sorted(indices) == list(range(n)):
        return OrderVerdict("valid", tuple(indices))  # type: ignore[arg-type]

    seen: set[int] = set()
    kept = []
    for i in indices:
        if i is not None and 0 <= i < n and i not in seen:
            seen.add(i)
            kept.append(i)
    kept.extend(i for i in range(n) if i not in seen)
    return OrderVerdict("repaired", tuple(kept))


@dataclass(frozen=True)
class Ranking:
    ranked: tuple[RankedIssue, ...]
    mode: RankingMode


def present_issues(issues: Sequence[AggregatedIssue], names: Mapping[HeuristicId, str]) -> str:
    blocks = []
    for idx, issue in enumerate(issues):
        heuristics = ", ".join(names[h] for h in issue.sorted_heuristics)
        blocks.append(
            f"[{idx}] Issue: {issue.summary}\n"
            f"    Recommendation: {issue.recommendation_summary}\n"
            f"    Violated heuristics: {heuristics}"
        )
    return "\n\n".join(blocks)


def _parse_ranking(value: Any) -> tuple[Any, dict[int, str]]:
    if isinstance(value, list):
        return value, {}
    if not isinstance(value, dict) or not isinstance(value.get("order"), list):
        raise SchemaError('ranking response needs an "order" list')
    order = value["order"]
    rationale: dict[int, str] = {}
    raw = value.get("rationale")
    if isinstance(raw, dict):
        for k, text in raw.items():
            idx = _as_index(k)
            if idx is not None and isinstance(text, str) and text.strip():
                rationale[idx] = text.strip()
    elif isinstance(raw, list):
        # aligned with order
        for pos, text in zip(order, raw):
            idx = _as_index(pos)
            if idx is not None and isinstance(text, str) and text.strip():
                rationale.setdefault(idx, text.strip())
    return order, rationale


def _apply(issues: Sequence[AggregatedIssue], order: Sequence[int], rationale: Mapping[int, str]):
    return tuple(
        RankedIssue(rank=pos + 1, issue=issues[idx], rationale=rationale.get(idx))
        for pos, idx in enumerate(order)
    )


def rank_scenario(
    issues: Sequence[AggregatedIssue],
    client: ModelClient,
    *,
    app: AppProfile,
    scenario: TaskScenario,
    templates: TemplateSet | None = None,
    names: Mapping[HeuristicId, str] | None = None,
) -> Ranking:
    n = len(issues)
    if n == 0:
        return Ranking((), "no-issues")
    if len({i.scenario_id for i in issues}) != 1:
        raise ValueError("all issues must belong to one scenario")
    if n == 1:
        return Ranking(_apply(issues, [0], {}), "single-issue")

    templates = templates or TemplateSet.load()
    names = names or {h.id: h.name for h in default_catalog()}
    request = ChatRequest(
        system_prompt=templates.render("rank_system", {}),
        user_prompt=templates.render(
            "rank_user",
            {
                "app_description": app.description,
                "persona": scenario.persona,
                "task": scenario.task_instruction,
                "issues": present_issues(issues, names),
            },
        ),
        model_id=client.config.chat_model_id,
        tag="rank",
    )

    def validate(value: Any) -> tuple[OrderVerdict, dict[int, str]]:
        order, rationale = _parse_ranking(value)
        verdict = validate_order(order, n)
        if verdict.status == "unrepairable":
            raise SchemaError("ranking order is not a list")
        return verdict, rationale

    try:
        verdict, rationale = ask_json(client, request, validate)
    except SchemaError as exc:
        log.warning("%s: ranking unusable (%s); keeping aggregation order", scenario.id, exc)
        return Ranking(_apply(issues, range(n), {}), "unranked-fallback")

    if verdict.status == "repaired":
        log.warning("%s: ranking was not a permutation; repaired to %s", scenario.id, list(verdict.order))
        return Ranking(_apply(issues, verdict.order, rationale), "model-repaired")
    return Ranking(_apply(issues, verdict.order, rationale), "model")
