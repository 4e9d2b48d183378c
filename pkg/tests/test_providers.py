import json
import random
import shutil

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uxinspect.core import VideoRef
from uxinspect.errors import (
    AttachmentUnreadable,
    CacheMiss,
    CredentialMissing,
    DimensionMismatch,
    TransportError,
)
from uxinspect.providers import (
    ChatRequest,
    EmbeddingVector,
    ModelClient,
    ProviderConfig,
    ResponseCache,
    RetryPolicy,
    call_with_retry,
    request_digest,
    request_payload,
)

from .conftest import NoNetwork, ScriptedChat, fast_config


def chat_request(video=None, **kw):
    base = dict(system_prompt="sys", user_prompt="user", model_id="m", attachments=(video,) if video else ())
    base.update(kw)
    return ChatRequest(**base)


class FlakyTransport:
    """Fails with the given statuses, then answers."""

    def __init__(self, statuses, text='{"ok": true}'):
        self.statuses = list(statuses)
        self.attempts = 0
        self.text = text

    def post(self, url, payload, headers, timeout):
        self.attempts += 1
        if self.statuses:
            status = self.statuses.pop(0)
            raise TransportError(f"HTTP {status}", status=status, retryable=status >= 500 or status == 429)
        return {"candidates": [{"content": {"parts": [{"text": self.text}]}}]}


class TestDigest:
    def test_field_order_irrelevant(self, video):
        payload = request_payload(chat_request(video))
        reordered = dict(reversed(list(payload.items())))
        assert request_digest(payload) == request_digest(reordered)
        assert request_digest(chat_request(video)) == request_digest(payload)

    def test_content_addressed_attachment(self, video, tmp_path):
        copy = tmp_path / "elsewhere" / "moved.mp4"
        copy.parent.mkdir()
        shutil.copy(video.path, copy)
        assert request_digest(chat_request(video)) == request_digest(chat_request(VideoRef(copy, 42)))

    def test_tag_not_in_key(self):
        assert request_digest(chat_request(tag="a")) == request_digest(chat_request(tag="b"))

    def test_unreadable_attachment(self, tmp_path):
        with pytest.raises(AttachmentUnreadable):
            request_digest(chat_request(VideoRef(tmp_path / "gone.mp4", 1)))

    @settings(max_examples=200)
    @given(st.text(min_size=1, max_size=80), st.data())
    def test_single_change_changes_key(self, prompt, data):
        pos = data.draw(st.integers(0, len(prompt) - 1))
        replacement = data.draw(st.characters().filter(lambda c: c != prompt[pos]))
        mutated = prompt[:pos] + replacement + prompt[pos + 1 :]
        assert request_digest(chat_request(user_prompt=prompt)) != request_digest(chat_request(user_prompt=mutated))

    def test_temperature_and_model_in_key(self):
        keys = {
            request_digest(chat_request()),
            request_digest(chat_request(temperature=0.5)),
            request_digest(chat_request(model_id="other")),
            request_digest(chat_request(response_format="free_text")),
        }
        assert len(keys) == 4


class TestRecordReplay:
    def test_record_then_replay_byte_identical(self, tmp_path, monkeypatch, video):
        monkeypatch.setenv("UXINSPECT_TEST_KEY", "k")
        text = '```json\n{"issues": []}\n```  trailing ünïcode'
        rec = ModelClient(fast_config(), "record", tmp_path / "cache", FlakyTransport([], text))
        assert rec.chat(chat_request(video)).text == text

        net = NoNetwork()
        rep = ModelClient(fast_config(), "replay", tmp_path / "cache", net)
        assert rep.chat(chat_request(video)).text == text
        assert net.calls == 0

    def test_cache_layout(self, tmp_path, monkeypatch):
        monkeypatch.setenv("UXINSPECT_TEST_KEY", "k")
        client = ModelClient(fast_config(), "record", tmp_path, FlakyTransport([], "hello"))
        client.chat(chat_request())
        key = request_digest(chat_request())
        assert (tmp_path / key).read_bytes() == b"hello"
        meta = json.loads((tmp_path / f"{key}.json").read_text())
        assert meta["created_at"] and meta["request"]["kind"] == "chat"

    def test_replay_miss(self, tmp_path):
        client = ModelClient(fast_config(), "replay", tmp_path, NoNetwork())
        with pytest.raises(CacheMiss):
            client.chat(chat_request())
        with pytest.raises(CacheMiss):
            client.embed(["a"])

    def test_replay_needs_no_credential(self, tmp_path, monkeypatch):
        monkeypatch.delenv("UXINSPECT_TEST_KEY", raising=False)
        ResponseCache(tmp_path).put(request_digest(chat_request()), b"x", {}, "2026-01-01T00:00:00Z")
        client = ModelClient(fast_config(), "replay", tmp_path, NoNetwork())
        assert client.chat(chat_request()).text == "x"
        assert client.latest_timestamp == "2026-01-01T00:00:00Z"

    def test_credential_missing(self, tmp_path, monkeypatch):
        monkeypatch.delenv("UXINSPECT_TEST_KEY", raising=False)
        client = ModelClient(fast_config(), "live", transport=FlakyTransport([]))
        with pytest.raises(CredentialMissing):
            client.chat(chat_request())

    def test_credential_not_logged(self, tmp_path, monkeypatch, caplog):
        monkeypatch.setenv("UXINSPECT_TEST_KEY", "super-secret-value")
        client = ModelClient(fast_config(), "record", tmp_path, FlakyTransport([503]), sleep=lambda s: None)
        with caplog.at_level("DEBUG"):
            client.chat(chat_request())
        assert "super-secret-value" not in caplog.text
        assert all("super-secret-value" not in p.read_text() for p in tmp_path.iterdir())


class TestRetry:
    def test_transient_then_success(self, tmp_path, monkeypatch):
        monkeypatch.setenv("UXINSPECT_TEST_KEY", "k")
        delays = []
        policy = RetryPolicy(max_attempts=4, base_backoff_ms=100, jitter=True)
        transport = FlakyTransport([503, 502, 500])
        client = ModelClient(
            fast_config(retry=policy), "record", tmp_path, transport, sleep=delays.append, rng=random.Random(3)
        )
        assert client.chat(chat_request()).text == '{"ok": true}'
        assert transport.attempts == 4 <= policy.max_attempts
        assert delays == sorted(delays) and len(delays) == 3

    def test_exhausted(self, monkeypatch):
        monkeypatch.setenv("UXINSPECT_TEST_KEY", "k")
        transport = FlakyTransport([503] * 10)
        client = ModelClient(fast_config(), "live", transport=transport, sleep=lambda s: None)
        with pytest.raises(TransportError, match="gave up after 3 attempts"):
            client.chat(chat_request())
        assert transport.attempts == 3

    def test_non_retryable_fails_fast(self, monkeypatch):
        monkeypatch.setenv("UXINSPECT_TEST_KEY", "k")
        transport = FlakyTransport([400])
        client = ModelClient(fast_config(), "live", transport=transport, sleep=lambda s: None)
        with pytest.raises(TransportError):
            client.chat(chat_request())
        assert transport.attempts == 1

    @given(
        st.integers(1, 8),
        st.integers(0, 2000),
        st.booleans(),
        st.integers(0, 12),
        st.integers(0, 2**32 - 1),
    )
    def test_retry_bound_and_monotone_delays(self, max_attempts, base, jitter, failures, seed):
        policy = RetryPolicy(max_attempts, base, jitter)
        attempts = []
        delays = []

        def fn():
            attempts.append(1)
            if len(attempts) <= failures:
                raise TransportError("boom", status=503, retryable=True)
            return "ok"

        try:
            call_with_retry(fn, policy, sleep=delays.append, rng=random.Random(seed))
        except TransportError:
            assert failures >= max_attempts
        assert len(attempts) <= max_attempts
        assert delays == sorted(delays)

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            RetryPolicy(max_attempts=0)


class TestEmbed:
    def test_alignment(self, live_client):
        client = live_client(ScriptedChat(None, embed=lambda texts: [[float(len(t)), 1.0] for t in texts]))
        vecs = client.embed(["a", "bb"])
        assert len(vecs) == 2 and {v.dimension for v in vecs} == {2}
        assert client.calls["embed"] == 1

    def test_ragged(self, live_client):
        client = live_client(ScriptedChat(None, embed=lambda texts: [[1.0], [1.0, 2.0]]))
        with pytest.raises(DimensionMismatch):
            client.embed(["a", "b"])

    def test_replay_determinism(self, tmp_path, monkeypatch):
        monkeypatch.setenv("UXINSPECT_TEST_KEY", "k")
        script = ScriptedChat(None, embed=lambda texts: [[0.1 * i, 0.3] for i, _ in enumerate(texts)])
        ModelClient(fast_config(), "record", tmp_path, script).embed(["same", "same"])
        rep = ModelClient(fast_config(), "replay", tmp_path, NoNetwork())
        first = rep.embed(["same", "same"])
        assert first == rep.embed(["same", "same"])

    def test_empty_texts_rejected(self, live_client):
        client = live_client(ScriptedChat(None))
        with pytest.raises(ValueError):
            client.embed([])
        with pytest.raises(ValueError):
            client.embed(["ok", " "])

    def test_vector_validation(self):
        with pytest.raises(ValueError):
            EmbeddingVector((1.0, float("nan")))


class TestWire:
    def test_gemini_chat_payload(self, live_client, video):
        script = ScriptedChat(lambda user: "answer")
        client = live_client(script)
        client.chat(chat_request(video))
        url, payload = script.requests[0]
        assert url.endswith("/models/m:generateContent")
        parts = payload["contents"][0]["parts"]
        assert parts[0]["inline_data"]["mime_type"] == "video/mp4"
        assert parts[-1]["text"] == "user"
        assert payload["system_instruction"]["parts"][0]["text"] == "sys"
        assert payload["generationConfig"] == {"temperature": 0.0, "responseMimeType": "application/json"}

    def test_openai_protocol(self, monkeypatch, video):
        monkeypatch.setenv("UXINSPECT_TEST_KEY", "k")
        seen = []

        class OpenAIish:
            def post(self, url, payload, headers, timeout):
                seen.append((url, payload, headers))
                if url.endswith("/embeddings"):
                    return {"data": [{"index": 1, "embedding": [0, 1]}, {"index": 0, "embedding": [1, 0]}]}
                return {"choices": [{"message": {"content": "hi"}}], "usage": {"prompt_tokens": 3, "completion_tokens": 1}}

        cfg = ProviderConfig(
            chat_endpoint="http://x/v1", embed_endpoint="http://x/v1", api_key_env="UXINSPECT_TEST_KEY",
            chat_protocol="openai", embed_protocol="openai",
        )
        client = ModelClient(cfg, "live", transport=OpenAIish())
        resp = client.chat(chat_request(video))
        assert resp.text == "hi" and resp.usage == {"input_tokens": 3, "output_tokens": 1}
        assert seen[0][0] == "http://x/v1/chat/completions"
        assert seen[0][2]["Authorization"] == "Bearer k"
        vecs = client.embed(["a", "b"])
        assert [v.components for v in vecs] == [(1.0, 0.0), (0.0, 1.0)]
