"""Per-scenario orchestration of evaluate -> aggregate -> rank -> report.

Each stage reads the previous stage's artifact from the scenario's output
directory and writes its own, so stages can be run one at a time.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from . import __version__
from .aggregate import group_scenario, summarize_groups
from .config import RunConfig
from .core import (
    AggregatedIssue,
    EvaluationReport,
    Heuristic,
    HeuristicId,
    Provenance,
    RankedIssue,
    RawIssue,
    TaskScenario,
    load_heuristic_catalog,
)
from .errors import StageError
from .evaluate import evaluate_scenario
from .prompts import TemplateSet
from .providers import ModelClient, Mode, Transport, utc_now
from .rank import rank_scenario
from .report import canonical_json, render_json, render_markdown

log = logging.getLogger(__name__)

STAGES = ("evaluate", "aggregate", "rank", "report")
RAW_ISSUES = "raw_issues.json"
AGGREGATED = "aggregated.json"
RANKED = "ranked.json"
REPORT_JSON = "report.json"
REPORT_MD = "report.md"


@dataclass
class Pipeline:
    config: RunConfig
    mode: Mode = Mode.REPLAY
    threshold: float | None = None
    top_k: int | None = None
    cache_dir: Path | None = None
    out_dir: Path | None = None
    templates_dir: Path | None = None
    transport_factory: Callable[[], Transport] | None = None
    catalog: list[Heuristic] = field(init=False)
    templates: TemplateSet = field(init=False)
    clients: dict[str, ModelClient] = field(init=False, default_factory=dict)

    def __post_init__(self) -> None:
        self.mode = Mode(self.mode)
        self.catalog = load_heuristic_catalog(self.config.heuristics_override)
        self.templates = TemplateSet.load(self.templates_dir or self.config.templates_dir)
        if self.threshold is None:
            self.threshold = self.config.aggregation.similarity_threshold
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError("threshold must be in (0, 1]")
        if self.top_k is None:
            self.top_k = self.config.report.top_k
        self.cache_dir = Path(self.cache_dir or self.config.cache_dir)
        self.out_dir = Path(self.out_dir or self.config.out_dir)

    @property
    def names(self) -> Mapping[HeuristicId, str]:
        return {h.id: h.name for h in self.catalog}

    def client_for(self, scenario: TaskScenario) -> ModelClient:
        """One client per scenario so call counts and timestamps stay per scenario."""
        if scenario.id not in self.clients:
            transport = self.transport_factory() if self.transport_factory else None
            self.clients[scenario.id] = ModelClient(
                self.config.provider, self.mode, self.cache_dir, transport
            )
        return self.clients[scenario.id]

    def scenario_dir(self, scenario: TaskScenario) -> Path:
        assert self.out_dir is not None
        return self.out_dir / scenario.id

    # --- artifact IO ---------------------------------------------------------

    def _write(self, scenario: TaskScenario, name: str, data: bytes | str) -> Path:
        d = self.scenario_dir(scenario)
        d.mkdir(parents=True, exist_ok=True)
        path = d / name
        if isinstance(data, str):
            data = data.encode("utf-8")
        path.write_bytes(data)
        return path

    def _read(self, scenario: TaskScenario, name: str) -> dict[str, Any]:
        path = self.scenario_dir(scenario) / name
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise FileNotFoundError(f"missing stage artifact {path}; run the previous stage first") from None
        if doc.get("scenario_id") != scenario.id:
            raise ValueError(f"{path} belongs to scenario {doc.get('scenario_id')!r}")
        return doc

    def _stamp(self, scenario: TaskScenario, previous: str = "") -> str:
        latest = self.client_for(scenario).latest_timestamp
        return max(previous, latest) or utc_now()

    # --- stages ----------------------------------------------------------------

    def evaluate(self, scenario: TaskScenario) -> list[RawIssue]:
        client = self.client_for(scenario)
        issues = evaluate_scenario(
            self.config.app,
            scenario,
            self.catalog,
            client,
            parallelism=self.config.evaluation.parallelism,
            templates=self.templates,
            budget=self.config.evaluation.budget,
        )
        doc = {
            "scenario_id": scenario.id,
            "created_at": self._stamp(scenario),
            "issues": [i.to_dict() for i in issues],
        }
        self._write(scenario, RAW_ISSUES, canonical_json(doc))
        return issues

    def aggregate(self, scenario: TaskScenario) -> list[AggregatedIssue]:
        raw = self._read(scenario, RAW_ISSUES)
        issues = [RawIssue.from_dict(d) for d in raw["issues"]]
        client = self.client_for(scenario)
        groups = group_scenario(
            issues,
            client,
            self.threshold,
            embed_recommendations=self.config.aggregation.embed_recommendations,
        )
        merged = summarize_groups(
            groups,
            client,
            templates=self.templates,
            names=self.names,
            parallelism=self.config.evaluation.parallelism,
        )
        doc = {
            "scenario_id": scenario.id,
            "created_at": self._stamp(scenario, raw.get("created_at", "")),
            "similarity_threshold": self.threshold,
            "issues": [
                {**m.to_dict(), "pair_similarities": g.to_dict()["pair_similarities"]}
                for g, m in zip(groups, merged)
            ],
        }
        log.info("[%s] %d raw issue(s) -> %d aggregated", scenario.id, len(issues), len(merged))
        self._write(scenario, AGGREGATED, canonical_json(doc))
        return merged

    def rank(self, scenario: TaskScenario) -> list[RankedIssue]:
        agg = self._read(scenario, AGGREGATED)
        issues = [AggregatedIssue.from_dict(d) for d in agg["issues"]]
        ranking = rank_scenario(
            issues,
            self.client_for(scenario),
            app=self.config.app,
            scenario=scenario,
            templates=self.templates,
            names=self.names,
        )
        doc = {
            "scenario_id": scenario.id,
            "created_at": self._stamp(scenario, agg.get("created_at", "")),
            "similarity_threshold": agg["similarity_threshold"],
            "ranking_mode": ranking.mode,
            "ranked": [
                {"rank": r.rank, "rationale": r.rationale, "issue": r.issue.to_dict()} for r in ranking.ranked
            ],
        }
        self._write(scenario, RANKED, canonical_json(doc))
        return list(ranking.ranked)

    def report(self, scenario: TaskScenario) -> EvaluationReport:
        doc = self._read(scenario, RANKED)
        ranked = tuple(
            RankedIssue(r["rank"], AggregatedIssue.from_dict(r["issue"]), r.get("rationale"))
            for r in doc["ranked"]
        )
        provider = self.config.provider
        report = EvaluationReport(
            app=self.config.app,
            scenario=scenario,
            ranked=ranked,
            provenance=Provenance(
                chat_model=provider.chat_model_id,
                embedding_model=provider.embed_model_id,
                similarity_threshold=doc["similarity_threshold"],
                pipeline_version=__version__,
                created_at=doc["created_at"],
                ranking_mode=doc["ranking_mode"],
            ),
        )
        formats = self.config.report.formats
        if "json" in formats:
            self._write(scenario, REPORT_JSON, render_json(report, self.names))
        if "markdown" in formats:
            self._write(scenario, REPORT_MD, render_markdown(report, self.top_k, self.names))
        return report

    def run_scenario(self, scenario: TaskScenario, stages: Sequence[str] = STAGES) -> None:
        for stage in STAGES:
            if stage not in stages:
                continue
            log.info("[%s] %s", scenario.id, stage)
            try:
                getattr(self, stage)(scenario)
            except Exception as exc:
                raise StageError(scenario.id, stage, exc) from exc
