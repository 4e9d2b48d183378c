"""Command-line entry point.

Exit codes: 0 all scenarios succeeded, 1 configuration error, 2 at least one
scenario failed (or, for ``estimate``, did not fit the context budget).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from .config import load_config
from .core import estimate_video_tokens, format_clock
from .errors import ConfigError, OverrideInvalid, StageError, TemplateError
from .pipeline import STAGES, Pipeline
from .providers import Mode, Transport

log = logging.getLogger("uxinspect")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FAILED = 2


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", required=True, type=Path, help="run configuration (JSON)")
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.REPLAY.value)
    p.add_argument("--threshold", type=float, help="cosine similarity threshold for grouping")
    p.add_argument("--top-k", type=int, help="show only the k most severe issues in Markdown")
    p.add_argument("--jobs", type=int, default=1, help="scenarios processed concurrently")
    p.add_argument("--cache-dir", type=Path)
    p.add_argument("--out-dir", type=Path)
    p.add_argument("--templates-dir", type=Path)
    p.add_argument("--scenario", action="append", dest="scenarios", metavar="ID",
                   help="restrict to this scenario id (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uxinspect", description="Heuristic usability evaluation of task screen recordings."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()
    run = sub.add_parser("run", parents=[common], help="run the full pipeline")
    run.add_argument("--stage", choices=STAGES, help="run only this stage")
    sub.add_parser("estimate", parents=[common], help="check recordings against the context budget")
    for stage in STAGES:
        sub.add_parser(stage, parents=[common], help=f"run only the {stage} stage")
    return parser


def _setup_logging(verbose: bool) -> None:
    root = logging.getLogger("uxinspect")
    if not any(getattr(h, "_uxinspect", False) for h in root.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
        handler._uxinspect = True  # type: ignore[attr-defined]
        root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)


def cmd_estimate(config, out=sys.stdout) -> int:
    ev = config.evaluation
    all_ok = True
    print(f"{'scenario':<40} {'duration':>9} {'tokens':>10}  verdict", file=out)
    for sc in config.scenarios:
        tokens = estimate_video_tokens(sc.recording.duration_seconds, ev.fps, ev.tokens_per_frame)
        verdict = ev.budget.check(sc.recording)
        status = "ok" if verdict.ok else f"over_budget (excess {verdict.excess})"
        all_ok &= verdict.ok
        print(f"{sc.id:<40} {format_clock(sc.recording.duration_seconds):>9} {tokens:>10}  {status}", file=out)
    print(f"context limit {ev.context_limit}, text reserve {ev.text_reserve}", file=out)
    return EXIT_OK if all_ok else EXIT_FAILED


def cmd_run(pipeline: Pipeline, stages: Sequence[str], jobs: int = 1) -> int:
    scenarios = pipeline.config.scenarios

    def one(sc) -> bool:
        try:
            pipeline.run_scenario(sc, stages)
        except StageError as exc:
            log.error("%s", exc)
            log.debug("traceback", exc_info=exc.cause)
            return False
        return True

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, scenarios))
    else:
        results = [one(sc) for sc in scenarios]
    failed = results.count(False)
    if failed:
        log.error("%d of %d scenario(s) failed", failed, len(results))
        return EXIT_FAILED
    return EXIT_OK


def main(
    argv: Sequence[str] | None = None,
    *,
    transport_factory: Callable[[], Transport] | None = None,
    pipeline_hook: Callable[[Pipeline], None] | None = None,
) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)

    try:
        config = load_config(args.config)
        if args.scenarios:
            unknown = set(args.scenarios) - {s.id for s in config.scenarios}
            if unknown:
                raise ConfigError(f"unknown scenario id(s): {', '.join(sorted(unknown))}")
            config = dataclasses.replace(
                config, scenarios=tuple(s for s in config.scenarios if s.id in args.scenarios)
            )
        if args.top_k is not None and args.top_k < 1:
            raise ConfigError("--top-k must be >= 1")
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        if args.command == "estimate":
            return cmd_estimate(config)
        pipeline = Pipeline(
            config,
            mode=Mode(args.mode),
            threshold=args.threshold,
            top_k=args.top_k,
            cache_dir=args.cache_dir,
            out_dir=args.out_dir,
            templates_dir=args.templates_dir,
            transport_factory=transport_factory,
        )
    except (ConfigError, OverrideInvalid, TemplateError, ValueError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG

    if pipeline_hook is not None:
        pipeline_hook(pipeline)
    if args.command == "run":
        stages = (args.stage,) if args.stage else STAGES
    else:
        stages = (args.command,)
    return cmd_run(pipeline, stages, args.jobs)


if __name__ == "__main__":
    raise SystemExit(main())
