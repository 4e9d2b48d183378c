from __future__ import annotations

import json
import shutil
from pathlib import Path
from typing import Any, Callable

import pytest

from uxinspect.core import AppProfile, TaskScenario, VideoRef
from uxinspect.media import build_minimal_mp4
from uxinspect.providers import ModelClient, ProviderConfig, RetryPolicy

FIXTURES = Path(__file__).parent / "fixtures"
EVENTHELPR = FIXTURES / "eventhelpr"
FIXTURE_CONFIG = EVENTHELPR / "config.json"
SCENARIO_IDS = ("eventhelpr/add-initial-options", "eventhelpr/access-event")


class NoNetwork:
    """Transport that counts calls and refuses them."""

    def __init__(self) -> None:
        self.calls = 0

    def post(self, url, payload, headers, timeout):
        self.calls += 1
        raise AssertionError(f"unexpected network access: {url}")


class ScriptedChat:
    """Gemini-shaped transport whose answer text comes from ``reply(user_prompt)``.

    ``reply`` may also return an Exception instance to raise it, and a list
    return value for an embed request is used as the vectors.
    """

    def __init__(self, reply: Callable[[str], Any], embed: Callable[[list[str]], list[list[float]]] | None = None):
        self.reply = reply
        self.embed = embed
        self.requests: list[tuple[str, dict]] = []

    def post(self, url, payload, headers, timeout):
        self.requests.append((url, payload))
        if url.endswith(":batchEmbedContents"):
            texts = [r["content"]["parts"][0]["text"] for r in payload["requests"]]
            assert self.embed is not None, "no embedding script"
            return {"embeddings": [{"values": v} for v in self.embed(texts)]}
        user = payload["contents"][0]["parts"][-1]["text"]
        out = self.reply(user)
        if isinstance(out, Exception):
            raise out
        return {"candidates": [{"content": {"parts": [{"text": out}]}}]}


def fast_config(**overrides) -> ProviderConfig:
    retry = overrides.pop("retry", RetryPolicy(max_attempts=3, base_backoff_ms=0, jitter=False))
    return ProviderConfig(api_key_env="UXINSPECT_TEST_KEY", retry=retry, **overrides)


@pytest.fixture
def live_client(monkeypatch) -> Callable[..., ModelClient]:
    """Factory for a live-mode client over a scripted transport."""
    monkeypatch.setenv("UXINSPECT_TEST_KEY", "test-key")

    def make(transport, **kwargs) -> ModelClient:
        return ModelClient(fast_config(), "live", transport=transport, sleep=lambda s: None, **kwargs)

    return make


@pytest.fixture
def replay_client() -> ModelClient:
    cfg = json.loads(FIXTURE_CONFIG.read_text())["provider"]
    provider = ProviderConfig(
        chat_model_id=cfg["chat_model_id"], embed_model_id=cfg["embed_model_id"], api_key_env=cfg["api_key_env"]
    )
    return ModelClient(provider, "replay", EVENTHELPR / "cache", transport=NoNetwork())


@pytest.fixture
def video(tmp_path) -> VideoRef:
    path = tmp_path / "clip.mp4"
    path.write_bytes(build_minimal_mp4(42, payload=b"clip"))
    return VideoRef(path, 42.0)


@pytest.fixture
def app() -> AppProfile:
    return AppProfile("DemoApp", "A demo app used to test the pipeline.")


@pytest.fixture
def scenario(video) -> TaskScenario:
    return TaskScenario("demo/task", "A tester.", "Click around and save a form.", video)


@pytest.fixture
def fixture_workspace(tmp_path) -> Path:
    """Copy of the EventHelpr fixture (config, videos, cache) in a temp dir."""
    dest = tmp_path / "eventhelpr"
    shutil.copytree(EVENTHELPR, dest, ignore=shutil.ignore_patterns("expected", "reports"))
    return dest


@pytest.fixture(scope="session")
def fixture_app_and_scenarios():
    from uxinspect.config import load_config

    cfg = load_config(FIXTURE_CONFIG)
    return cfg.app, {s.id: s for s in cfg.scenarios}
