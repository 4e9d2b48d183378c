"""Prompt templates and structured-output extraction."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from .errors import MalformedJson, MissingVariable, NoJsonFound, TemplateError

log = logging.getLogger(__name__)

TEMPLATE_IDS = (
    "eval_system",
    "eval_user",
    "issue_summary",
    "recommendation_summary",
    "rank_system",
    "rank_user",
)

REQUIRED_PLACEHOLDERS: dict[str, frozenset[str]] = {
    "eval_system": frozenset(),
    "eval_user": frozenset({"app_description", "persona", "task", "heuristic_name", "guiding_question"}),
    "issue_summary": frozenset({"issues"}),
    "recommendation_summary": frozenset({"recommendations"}),
    "rank_system": frozenset(),
    "rank_user": frozenset({"app_description", "persona", "task", "issues"}),
}

# Appended to user templates after substitution so custom template files
# cannot drop the response contract.
FORMAT_INSTRUCTIONS: dict[str, str] = {
    "eval_user": (
        "Return JSON output only, with this structure:\n"
        '{"issues": [{"description": "<problem>", "recommendation": "<fix>"}]}\n'
        'If the heuristic is not violated, return {"issues": []}.'
    ),
    "issue_summary": 'Return JSON output only, with this structure:\n{"summary": "<merged description>"}',
    "recommendation_summary": (
        'Return JSON output only, with this structure:\n{"recommendation": "<merged recommendation>"}'
    ),
    "rank_user": (
        "Return JSON output only, with this structure:\n"
        '{"order": [<index of most severe issue>, ..., <index of least severe issue>], '
        '"rationale": {"<index>": "<short reason>"}}\n'
        "The order must contain every index exactly once."
    ),
}

REPAIR_INSTRUCTION = (
    "Your previous answer could not be processed. Respond with only the JSON object, "
    "without any other text."
)

PLACEHOLDER = re.compile(r"<([a-z][a-z0-9_]*)>")


def placeholders(body: str) -> set[str]:
    return set(PLACEHOLDER.findall(body))


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    body: str

    def __post_init__(self) -> None:
        if self.id not in REQUIRED_PLACEHOLDERS:
            raise TemplateError(f"unknown template id {self.id!r}")
        missing = REQUIRED_PLACEHOLDERS[self.id] - placeholders(self.body)
        if missing:
            raise TemplateError(f"template {self.id!r} lacks placeholders: {', '.join(sorted(missing))}")

    def render(self, variables: Mapping[str, str]) -> str:
        for name in sorted(placeholders(self.body)):
            if name not in variables:
                raise MissingVariable(name, self.id)
        # single pass, so substituted values are never re-expanded
        text = PLACEHOLDER.sub(lambda m: str(variables[m.group(1)]), self.body).rstrip("\n")
        fmt = FORMAT_INSTRUCTIONS.get(self.id)
        if fmt:
            text = f"{text}\n\n{fmt}"
        return text + "\n"


def _default_body(template_id: str) -> str:
    return resources.files("uxinspect").joinpath("templates", f"{template_id}.txt").read_text(encoding="utf-8")


class TemplateSet:
    """All six templates; files in ``templates_dir`` named ``<id>.txt`` replace the defaults."""

    def __init__(self, templates: Mapping[str, PromptTemplate]) -> None:
        missing = set(TEMPLATE_IDS) - set(templates)
        if missing:
            raise TemplateError(f"missing templates: {', '.join(sorted(missing))}")
        self._templates = dict(templates)

    @classmethod
    def load(cls, templates_dir: str | Path | None = None) -> TemplateSet:
        loaded = {}
        for tid in TEMPLATE_IDS:
            body = None
            if templates_dir is not None:
                path = Path(templates_dir) / f"{tid}.txt"
                if path.is_file():
                    body = path.read_text(encoding="utf-8")
                    log.debug("using template override %s", path)
            loaded[tid] = PromptTemplate(tid, body if body is not None else _default_body(tid))
        return cls(loaded)

    def __getitem__(self, template_id: str) -> PromptTemplate:
        return self._templates[template_id]

    def render(self, template_id: str, variables: Mapping[str, str]) -> str:
        if template_id not in self._templates:
            raise TemplateError(f"unknown template id {template_id!r}")
        return self._templates[template_id].render(variables)


_default_set: TemplateSet | None = None


def render(template_id: str, variables: Mapping[str, str], templates: TemplateSet | None = None) -> str:
    global _default_set
    if templates is None:
        if _default_set is None:
            _default_set = TemplateSet.load()
        templates = _default_set
    return templates.render(template_id, variables)


def enumerate_lines(items: list[str]) -> str:
    return "\n".join(f"{i}. {item}" for i, item in enumerate(items, start=1))


# --- JSON extraction ---------------------------------------------------------

_FENCE = re.compile(r"```[ \t]*([A-Za-z0-9_-]*)[ \t]*\r?\n?(.*?)```", re.DOTALL)
_TRAILING_COMMA = re.compile(r",(\s*[}\]])")


def _balanced_end(text: str, start: int) -> int:
    """Index one past the bracket closing the one at ``start``.

    Returns -1 on a mismatched closer and -2 if the text ends first.
    """
    stack = []
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch in "{[":
            stack.append("}" if ch == "{" else "]")
        elif ch in "}]":
            if stack.pop() != ch:
                return -1
            if not stack:
                return i + 1
    return -2


def _strip_trailing_commas(region: str) -> str:
    out = []
    last = 0
    # only touch commas outside string literals
    for m in re.finditer(r'"(?:\\.|[^"\\])*"', region):
        out.append(_TRAILING_COMMA.sub(r"\1", region[last : m.start()]))
        out.append(m.group(0))
        last = m.end()
    out.append(_TRAILING_COMMA.sub(r"\1", region[last:]))
    return "".join(out)


def _scan(text: str) -> tuple[bool, Any, str | None]:
    """(found, value, first_error) for the first balanced region that parses."""
    first_error = None
    idx = 0
    while idx < len(text):
        if text[idx] not in "{[":
            idx += 1
            continue
        end = _balanced_end(text, idx)
        if end == -2:
            # everything after this point is inside the unterminated value
            return False, None, first_error or f"unterminated JSON starting at offset {idx}"
        if end == -1:
            first_error = first_error or f"mismatched brackets starting at offset {idx}"
            idx += 1
            continue
        region = text[idx:end]
        try:
            return True, json.loads(region), None
        except ValueError as exc:
            try:
                return True, json.loads(_strip_trailing_commas(region)), None
            except ValueError:
                first_error = first_error or f"invalid JSON at offset {idx}: {exc}"
        idx = end
    return False, None, first_error


def extract_json(model_text: str) -> Any:
    """Parse the first JSON object or array embedded in model output.

    Fenced code blocks are searched before the surrounding prose.

    Raises:
        NoJsonFound: the text contains no ``{`` or ``[`` at all.
        MalformedJson: candidate regions exist but none parses.
    """
    text = model_text or ""
    errors = []
    for m in _FENCE.finditer(text):
        found, value, err = _scan(m.group(2))
        if found:
            return value
        if err:
            errors.append(err)
    found, value, err = _scan(text)
    if found:
        return value
    if err:
        errors.append(err)
    if not errors:
        raise NoJsonFound(f"no JSON value in model output: {text[:120]!r}")
    raise MalformedJson(errors[0])
