import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uxinspect.errors import MalformedJson, MissingVariable, NoJsonFound, TemplateError
from uxinspect.prompts import (
    FORMAT_INSTRUCTIONS,
    REQUIRED_PLACEHOLDERS,
    TEMPLATE_IDS,
    PromptTemplate,
    TemplateSet,
    enumerate_lines,
    extract_json,
    render,
)

from .conftest import FIXTURES
from .json_corpus import CORPUS

EVAL_VARS = {
    "app_description": "KnowledgeCheckR is a quiz platform.",
    "persona": "A teacher preparing a quiz.",
    "task": "Create a knowledge check with two questions.",
    "heuristic_name": "User Control and Freedom",
    "guiding_question": "Can users easily undo or exit unwanted actions (e.g., cancel, back, undo)?",
}

ALL_VARS = {
    "eval_system": {},
    "eval_user": EVAL_VARS,
    "issue_summary": {"issues": "1. a\n2. b"},
    "recommendation_summary": {"recommendations": "1. a\n2. b"},
    "rank_system": {},
    "rank_user": {"app_description": "app", "persona": "p", "task": "t", "issues": "[0] x"},
}


class TestRender:
    def test_eval_user_contains_values(self):
        text = render("eval_user", EVAL_VARS)
        for value in EVAL_VARS.values():
            assert value in text
        assert '{"issues": [' in text

    def test_missing_variable(self):
        vars_ = dict(EVAL_VARS)
        del vars_["guiding_question"]
        with pytest.raises(MissingVariable) as err:
            render("eval_user", vars_)
        assert err.value.name == "guiding_question"

    def test_issue_summary_golden(self):
        descriptions = [
            "[Visibility of System Status] No confirmation after saving.",
            "[Error Prevention] Save can be clicked twice, creating duplicates.",
            "[Error Prevention] User re-opens the list to check the save.",
        ]
        text = render("issue_summary", {"issues": enumerate_lines(descriptions)})
        golden = (FIXTURES / "golden" / "issue_summary.txt").read_text(encoding="utf-8")
        assert text == golden
        for i, d in enumerate(descriptions, start=1):
            assert f"{i}. {d}" in text

    @pytest.mark.parametrize("tid", TEMPLATE_IDS)
    def test_defaults_render_cleanly(self, tid):
        text = render(tid, ALL_VARS[tid])
        for name in REQUIRED_PLACEHOLDERS[tid]:
            assert f"<{name}>" not in text
        if tid in FORMAT_INSTRUCTIONS:
            assert "Return JSON output only" in text

    def test_values_are_not_re_expanded(self):
        text = render("issue_summary", {"issues": "literal <issues> and <persona>"})
        assert "literal <issues> and <persona>" in text

    @settings(max_examples=100)
    @given(st.sampled_from(sorted(EVAL_VARS)), st.text(min_size=1, max_size=40))
    def test_injective_per_variable(self, name, new_value):
        changed = dict(EVAL_VARS, **{name: new_value})
        if new_value != EVAL_VARS[name]:
            assert render("eval_user", changed) != render("eval_user", EVAL_VARS)

    def test_override_directory(self, tmp_path):
        (tmp_path / "eval_system.txt").write_text("Custom system prompt.\n")
        ts = TemplateSet.load(tmp_path)
        assert ts.render("eval_system", {}) == "Custom system prompt.\n"
        assert ts.render("rank_system", {}) == render("rank_system", {})

    def test_override_missing_placeholder(self, tmp_path):
        (tmp_path / "eval_user.txt").write_text("Evaluate <heuristic_name> only.")
        with pytest.raises(TemplateError):
            TemplateSet.load(tmp_path)

    def test_unknown_template(self):
        with pytest.raises(TemplateError):
            PromptTemplate("nope", "x")


class TestExtractJson:
    def test_fenced(self):
        assert extract_json('```json\n{"issues":[]}\n```') == {"issues": []}

    def test_prose_wrapped_array(self):
        assert extract_json('Here are the issues: [{"a": 1}] Hope this helps!') == [{"a": 1}]

    def test_no_json(self):
        with pytest.raises(NoJsonFound):
            extract_json("no json at all")
        with pytest.raises(NoJsonFound):
            extract_json("")

    def test_malformed(self):
        with pytest.raises(MalformedJson):
            extract_json("{'single': 'quotes'}")

    def test_truncated(self):
        with pytest.raises(MalformedJson):
            extract_json('{"issues": [{"description": "cut off')

    @pytest.mark.parametrize("text,expected", CORPUS, ids=[f"case{i:02d}" for i in range(len(CORPUS))])
    def test_corpus(self, text, expected):
        assert extract_json(text) == expected

    @settings(max_examples=300)
    @given(
        st.recursive(
            st.none() | st.booleans() | st.integers() | st.text(max_size=10),
            lambda inner: st.lists(inner, max_size=4) | st.dictionaries(st.text(max_size=6), inner, max_size=4),
            max_leaves=12,
        ).filter(lambda v: isinstance(v, (list, dict))),
        st.text(alphabet=st.characters(blacklist_characters="{}[]`"), max_size=30),
        st.text(alphabet=st.characters(blacklist_characters="{}[]`"), max_size=30),
    )
    def test_round_trip_embedded(self, value, prefix, suffix):
        assert extract_json(prefix + json.dumps(value) + suffix) == value
