"""Per-heuristic multimodal evaluation of one task scenario."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Sequence

from .core import AppProfile, Heuristic, HeuristicId, RawIssue, TaskScenario, TokenBudget
from .errors import BudgetExceeded, HeuristicFailed, SchemaError
from .prompts import TemplateSet
from .providers import ChatRequest, ModelClient
from .structured import ask_json

log = logging.getLogger(__name__)


def parse_issue_list(value: Any) -> list[tuple[str, str]]:
    """Validate an evaluation answer and return (description, recommendation) pairs.

    Entries whose description or recommendation is blank are dropped.
    """
    if isinstance(value, dict):
        if "issues" not in value:
            raise SchemaError('evaluation response has no "issues" key')
        value = value["issues"]
    if not isinstance(value, list):
        raise SchemaError('"issues" must be a list')

    pairs = []
    for i, entry in enumerate(value):
        if not isinstance(entry, dict):
            raise SchemaError(f"issue #{i} is not an object")
        description = entry.get("description") or ""
        recommendation = entry.get("recommendation") or ""
        if not isinstance(description, str) or not isinstance(recommendation, str):
            raise SchemaError(f"issue #{i}: description and recommendation must be strings")
        description, recommendation = description.strip(), recommendation.strip()
        if not description or not recommendation:
            log.warning("dropping issue #%d with blank description or recommendation", i)
            continue
        pairs.append((description, recommendation))
    return pairs


def build_evaluation_request(
    app: AppProfile,
    scenario: TaskScenario,
    heuristic: Heuristic,
    model_id: str,
    templates: TemplateSet,
) -> ChatRequest:
    user = templates.render(
        "eval_user",
        {
            "app_description": app.description,
            "persona": scenario.persona,
            "task": scenario.task_instruction,
            "heuristic_name": heuristic.name,
            "guiding_question": heuristic.guiding_question,
        },
    )
    return ChatRequest(
        system_prompt=templates.render("eval_system", {}),
        user_prompt=user,
        model_id=model_id,
        attachments=(scenario.recording,),
        temperature=0.0,
        response_format="json",
        tag="evaluate",
    )


def evaluate_heuristic(
    app: AppProfile,
    scenario: TaskScenario,
    heuristic: Heuristic,
    client: ModelClient,
    *,
    templates: TemplateSet | None = None,
    budget: TokenBudget | None = None,
) -> list[RawIssue]:
    budget = budget or TokenBudget()
    verdict = budget.check(scenario.recording)
    if not verdict.ok:
        raise BudgetExceeded(
            f"scenario {scenario.id!r}: recording needs {verdict.estimated_tokens} tokens "
            f"+ {verdict.reserve} reserve, {verdict.excess} over the {verdict.context_limit} limit"
        )
    templates = templates or TemplateSet.load()
    request = build_evaluation_request(app, scenario, heuristic, client.config.chat_model_id, templates)
    pairs = ask_json(client, request, parse_issue_list)
    return [RawIssue(scenario.id, heuristic.id, d, r) for d, r in pairs]


def evaluate_scenario(
    app: AppProfile,
    scenario: TaskScenario,
    catalog: Sequence[Heuristic],
    client: ModelClient,
    *,
    parallelism: int = 4,
    templates: TemplateSet | None = None,
    budget: TokenBudget | None = None,
) -> list[RawIssue]:
    """Evaluate all heuristics; issues come back ordered by (heuristic, position in answer)."""
    ids = {h.id for h in catalog}
    if len(catalog) != len(HeuristicId) or len(ids) != len(HeuristicId):
        raise ValueError(f"catalog must hold all {len(HeuristicId)} heuristics, got {len(catalog)}")
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    templates = templates or TemplateSet.load()
    ordered = sorted(catalog, key=lambda h: h.id)

    def run(h: Heuristic) -> list[RawIssue]:
        return evaluate_heuristic(app, scenario, h, client, templates=templates, budget=budget)

    results: list[RawIssue] = []
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        futures = [(h, pool.submit(run, h)) for h in ordered]
        for h, fut in futures:
            try:
                found = fut.result()
            except BudgetExceeded:
                for _, other in futures:
                    other.cancel()
                raise
            except Exception as exc:
                for _, other in futures:
                    other.cancel()
                raise HeuristicFailed(int(h.id), h.name, exc) from exc
            log.info("%s: %d issue(s) under %s", scenario.id, len(found), h.name)
            results.extend(found)
    return results
