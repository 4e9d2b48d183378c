"""Group near-duplicate issues by embedding similarity and merge each group."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .core import AggregatedIssue, HeuristicId, RawIssue, default_catalog
from .errors import AlignmentError, DimensionMismatch, SchemaError, ZeroVector
from .prompts import TemplateSet, enumerate_lines
from .providers import ChatRequest, EmbeddingVector, ModelClient
from .structured import ask_json

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.7


def _components(v: EmbeddingVector | Sequence[float]) -> Sequence[float]:
    return v.components if isinstance(v, EmbeddingVector) else v


def cosine(a: EmbeddingVector | Sequence[float], b: EmbeddingVector | Sequence[float]) -> float:
    """Cosine similarity, clamped to [-1, 1]."""
    xs, ys = _components(a), _components(b)
    if len(xs) != len(ys):
        raise DimensionMismatch(f"cannot compare vectors of dimension {len(xs)} and {len(ys)}")
    na = math.sqrt(math.fsum(x * x for x in xs))
    nb = math.sqrt(math.fsum(y * y for y in ys))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    dot = math.fsum(x * y for x, y in zip(xs, ys))
    return max(-1.0, min(1.0, dot / (na * nb)))


@dataclass(frozen=True)
class SimilarityGroup:
    members: tuple[RawIssue, ...]
    # keyed by (i, j), i < j, indices into members
    pair_similarities: Mapping[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.members:
            raise ValueError("a similarity group needs at least one member")
        if len({m.scenario_id for m in self.members}) != 1:
            raise ValueError("group members must share one scenario")

    def to_dict(self) -> dict[str, Any]:
        return {
            "members": [m.to_dict() for m in self.members],
            "pair_similarities": [[i, j, s] for (i, j), s in sorted(self.pair_similarities.items())],
        }


def _find(parent: list[int], i: int) -> int:
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


def build_groups(
    issues: Sequence[RawIssue],
    vectors: Sequence[EmbeddingVector | Sequence[float]],
    threshold: float = DEFAULT_THRESHOLD,
) -> list[SimilarityGroup]:
    """Connected components of the graph linking pairs with cosine >= threshold.

    Groups are ordered by their smallest member index; members keep input order.
    """
    if len(issues) != len(vectors):
        raise AlignmentError(f"{len(issues)} issues but {len(vectors)} vectors")
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must be in (0, 1]")
    if len({i.scenario_id for i in issues}) > 1:
        raise ValueError("all issues must belong to one scenario")

    n = len(issues)
    parent = list(range(n))
    sims: dict[tuple[int, int], float] = {}
    for i in range(n):
        for j in range(i + 1, n):
            s = cosine(vectors[i], vectors[j])
            sims[i, j] = s
            if s >= threshold:
                ri, rj = _find(parent, i), _find(parent, j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    components: dict[int, list[int]] = {}
    for i in range(n):
        components.setdefault(_find(parent, i), []).append(i)

    groups = []
    for idxs in sorted(components.values(), key=lambda c: c[0]):
        local = {
            (a, b): sims[idxs[a], idxs[b]] for a in range(len(idxs)) for b in range(a + 1, len(idxs))
        }
        groups.append(SimilarityGroup(tuple(issues[k] for k in idxs), local))
    return groups


def _text_field(name: str):
    def validate(value: Any) -> str:
        if not isinstance(value, dict) or not isinstance(value.get(name), str) or not value[name].strip():
            raise SchemaError(f'expected an object with a non-empty "{name}" string')
        return value[name].strip()

    return validate


def _labelled(members: Sequence[RawIssue], attr: str, names: Mapping[HeuristicId, str]) -> str:
    return enumerate_lines([f"[{names[m.heuristic]}] {getattr(m, attr)}" for m in members])


def summarize_group(
    group: SimilarityGroup,
    client: ModelClient,
    *,
    templates: TemplateSet | None = None,
    names: Mapping[HeuristicId, str] | None = None,
) -> AggregatedIssue:
    members = group.members
    if len(members) == 1:
        only = members[0]
        return AggregatedIssue.from_members(members, only.description, only.recommendation)

    templates = templates or TemplateSet.load()
    names = names or {h.id: h.name for h in default_catalog()}
    system = "You are a usability expert consolidating the results of a heuristic inspection."
    model = client.config.chat_model_id

    issue_req = ChatRequest(
        system_prompt=system,
        user_prompt=templates.render("issue_summary", {"issues": _labelled(members, "description", names)}),
        model_id=model,
        tag="issue_summary",
    )
    rec_req = ChatRequest(
        system_prompt=system,
        user_prompt=templates.render(
            "recommendation_summary", {"recommendations": _labelled(members, "recommendation", names)}
        ),
        model_id=model,
        tag="recommendation_summary",
    )
    summary = ask_json(client, issue_req, _text_field("summary"))
    recommendation = ask_json(client, rec_req, _text_field("recommendation"))
    return AggregatedIssue.from_members(members, summary, recommendation)


def embedding_text(issue: RawIssue, include_recommendation: bool = False) -> str:
    if include_recommendation:
        return f"{issue.description}\n{issue.recommendation}"
    return issue.description


def group_scenario(
    issues: Sequence[RawIssue],
    client: ModelClient,
    threshold: float = DEFAULT_THRESHOLD,
    *,
    embed_recommendations: bool = False,
) -> list[SimilarityGroup]:
    """Embed all issue texts in one batch and group them."""
    if not issues:
        return []
    vectors = client.embed([embedding_text(i, embed_recommendations) for i in issues])
    return build_groups(issues, vectors, threshold)


def summarize_groups(
    groups: Sequence[SimilarityGroup],
    client: ModelClient,
    *,
    templates: TemplateSet | None = None,
    names: Mapping[HeuristicId, str] | None = None,
    parallelism: int = 1,
) -> list[AggregatedIssue]:
    templates = templates or TemplateSet.load()
    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        return list(pool.map(lambda g: summarize_group(g, client, templates=templates, names=names), groups))


def aggregate_scenario(
    issues: Sequence[RawIssue],
    client: ModelClient,
    threshold: float = DEFAULT_THRESHOLD,
    *,
    templates: TemplateSet | None = None,
    names: Mapping[HeuristicId, str] | None = None,
    embed_recommendations: bool = False,
    parallelism: int = 1,
) -> list[AggregatedIssue]:
    groups = group_scenario(issues, client, threshold, embed_recommendations=embed_recommendations)
    log.info("%d issue(s) formed %d group(s) at threshold %.2f", len(issues), len(groups), threshold)
    return summarize_groups(groups, client, templates=templates, names=names, parallelism=parallelism)
