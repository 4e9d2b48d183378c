"""JSON and Markdown rendering of evaluation reports.

JSON key order is fixed::

    app{name, description}
    scenario{id, persona, task_instruction, recording{file, duration_seconds}}
    provenance{chat_model, embedding_model, similarity_threshold,
               pipeline_version, created_at, ranking_mode}
    issues[{rank, summary, recommendation, violated_heuristics, member_count,
            rationale?}]

``rationale`` appears only when the ranking model supplied one.
"""

from __future__ import annotations

import json
from typing import Any, Mapping

from .core import EvaluationReport, HeuristicId, RankedIssue, default_catalog, format_clock


def _names(names: Mapping[HeuristicId, str] | None) -> Mapping[HeuristicId, str]:
    return names or {h.id: h.name for h in default_catalog()}


def _issue_dict(item: RankedIssue, names: Mapping[HeuristicId, str]) -> dict[str, Any]:
    out: dict[str, Any] = {
        "rank": item.rank,
        "summary": item.issue.summary,
        "recommendation": item.issue.recommendation_summary,
        "violated_heuristics": [names[h] for h in item.issue.sorted_heuristics],
        "member_count": item.issue.member_count,
    }
    if item.rationale:
        out["rationale"] = item.rationale
    return out


def report_document(report: EvaluationReport, names: Mapping[HeuristicId, str] | None = None) -> dict[str, Any]:
    names = _names(names)
    p = report.provenance
    rec = report.scenario.recording
    return {
        "app": {"name": report.app.name, "description": report.app.description},
        "scenario": {
            "id": report.scenario.id,
            "persona": report.scenario.persona,
            "task_instruction": report.scenario.task_instruction,
            "recording": {"file": rec.path.name, "duration_seconds": rec.duration_seconds},
        },
        "provenance": {
            "chat_model": p.chat_model,
            "embedding_model": p.embedding_model,
            "similarity_threshold": p.similarity_threshold,
            "pipeline_version": p.pipeline_version,
            "created_at": p.created_at,
            "ranking_mode": p.ranking_mode,
        },
        "issues": [_issue_dict(r, names) for r in report.ranked],
    }


def canonical_json(doc: Any) -> bytes:
    return (json.dumps(doc, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def render_json(report: EvaluationReport, names: Mapping[HeuristicId, str] | None = None) -> bytes:
    return canonical_json(report_document(report, names))


def render_markdown(
    report: EvaluationReport,
    top_k: int | None = None,
    names: Mapping[HeuristicId, str] | None = None,
) -> str:
    if top_k is not None and top_k < 1:
        raise ValueError("top_k must be >= 1")
    names = _names(names)
    sc = report.scenario
    p = report.provenance
    lines = [
        f"# Usability report: {report.app.name}",
        "",
        f"Scenario `{sc.id}`",
        "",
        f"- **Persona:** {sc.persona}",
        f"- **Task:** {sc.task_instruction}",
        f"- **Recording:** {sc.recording.path.name} ({format_clock(sc.recording.duration_seconds)})",
        f"- **Models:** {p.chat_model} (chat), {p.embedding_model} (embedding)",
        f"- **Similarity threshold:** {p.similarity_threshold}",
        f"- **Ranking:** {p.ranking_mode}",
        f"- **Generated:** {p.created_at} by uxinspect {p.pipeline_version}",
        "",
    ]
    ranked = list(report.ranked)
    if not ranked:
        lines += ["No usability issues identified.", ""]
        return "\n".join(lines)

    shown = ranked if top_k is None else ranked[:top_k]
    lines += ["## Issues by severity", ""]
    for item in shown:
        issue = item.issue
        lines += [
            f"### {item.rank}. {_headline(issue.summary)}",
            "",
            f"**Issue:** {issue.summary}",
            "",
            f"**Recommendation:** {issue.recommendation_summary}",
            "",
            f"**Violated heuristics:** {', '.join(names[h] for h in issue.sorted_heuristics)}",
            "",
        ]
        if issue.member_count > 1:
            lines += [f"_Merged from {issue.member_count} findings._", ""]
        if item.rationale:
            lines += [f"_Severity rationale:_ {item.rationale}", ""]

    omitted = len(ranked) - len(shown)
    if omitted:
        noun = "issue" if omitted == 1 else "issues"
        lines += [f"_{omitted} further {noun} omitted._", ""]
    return "\n".join(lines)


def _headline(text: str, limit: int = 80) -> str:
    first = text.strip().split("\n", 1)[0]
    end = first.find(". ")
    if 0 < end < limit:
        return first[: end + 1]
    if len(first) <= limit:
        return first
    cut = first[:limit].rsplit(" ", 1)[0]
    return cut + "..."
