import base64
import json

import httpx
import numpy as np
import pytest

from edgeprior.imaging import CANNY_CONFIGS, RasterImage, canny
from edgeprior.vlm_client import (BASELINE, EDGEFLOW, ChatEndpoint, ConfigurationError, FixtureKey,
                                  GenerationParams, MockEndpoint, MockError, PromptBundle, RequestError,
                                  TransportError, build_bundle, bundle_messages, extract_code_block,
                                  generate, load_prompt)

IMG = RasterImage(np.full((20, 30, 3), 255, dtype=np.uint8))
EDGES = canny(IMG, CANNY_CONFIGS["C3"])


def ok_reply(text="```mermaid\nflowchart TD\nA --> B\n```"):
    return httpx.Response(200, json={"model": "served-model",
                                     "choices": [{"message": {"content": text}}]})


def endpoint(handler, **kw):
    sleeps = []
    ep = ChatEndpoint("http://vlm.test/v1", "vision", api_key="k", transport=httpx.MockTransport(handler),
                      sleep=sleeps.append, **kw)
    return ep, sleeps


def messages():
    return bundle_messages(build_bundle(EDGEFLOW, IMG, EDGES))


class TestBundle:
    def test_image_counts(self):
        assert len(build_bundle(BASELINE, IMG).images) == 1
        assert len(build_bundle(EDGEFLOW, IMG, EDGES).images) == 2

    def test_condition_mismatch(self):
        with pytest.raises(ConfigurationError):
            build_bundle(EDGEFLOW, IMG)
        with pytest.raises(ConfigurationError):
            build_bundle(BASELINE, IMG, EDGES)
        with pytest.raises(ConfigurationError):
            PromptBundle("s", "u", (b"x",), EDGEFLOW)

    def test_prompts_differ_by_condition(self):
        edge_text = load_prompt("user_edgeflow")
        assert "edge-detected" in edge_text
        assert "edge-detected" not in load_prompt("user_baseline")
        assert build_bundle(BASELINE, IMG).system_text == build_bundle(EDGEFLOW, IMG, EDGES).system_text

    def test_message_layout(self):
        msgs = messages()
        assert [m["role"] for m in msgs] == ["system", "user"]
        parts = msgs[1]["content"]
        assert [p["type"] for p in parts] == ["text", "image_url", "image_url"]
        png = base64.b64decode(parts[2]["image_url"]["url"].split(",", 1)[1])
        assert png[:8] == b"\x89PNG\r\n\x1a\n"

    def test_edge_png_lossless(self):
        from io import BytesIO
        from PIL import Image
        png = build_bundle(EDGEFLOW, IMG, EDGES).images[1]
        assert np.array_equal(np.asarray(Image.open(BytesIO(png))), EDGES.data)


class TestParams:
    def test_defaults(self):
        assert GenerationParams() == GenerationParams(0.3, 0.8, 16000)

    @pytest.mark.parametrize("kw", [{"temperature": -0.1}, {"top_p": 0}, {"top_p": 1.5}, {"max_tokens": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            GenerationParams(**kw)


class TestChatEndpoint:
    def test_payload_and_headers(self):
        seen = {}

        def handler(request):
            seen["url"] = str(request.url)
            seen["auth"] = request.headers.get("authorization")
            seen["body"] = json.loads(request.content)
            return ok_reply()

        ep, _ = endpoint(handler)
        reply = ep.complete(messages(), GenerationParams())
        assert seen["url"] == "http://vlm.test/v1/chat/completions"
        assert seen["auth"] == "Bearer k"
        body = seen["body"]
        assert (body["model"], body["temperature"], body["top_p"], body["max_tokens"]) == ("vision", 0.3, 0.8, 16000)
        assert reply.model_id == "served-model" and "flowchart" in reply.raw_text

    def test_4xx_not_retried(self):
        calls = []

        def handler(request):
            calls.append(1)
            return httpx.Response(401, text="bad key")

        ep, sleeps = endpoint(handler)
        with pytest.raises(RequestError) as info:
            ep.complete(messages(), GenerationParams())
        assert info.value.status == 401 and "bad key" in str(info.value.body)
        assert len(calls) == 1 and sleeps == []

    def test_5xx_retried_then_success(self):
        replies = iter([httpx.Response(503), httpx.Response(502), ok_reply("hi")])
        ep, sleeps = endpoint(lambda request: next(replies))
        assert ep.complete(messages(), GenerationParams()).raw_text == "hi"
        assert sleeps == [1.0, 2.0]

    def test_gives_up(self):
        def handler(request):
            raise httpx.ConnectError("refused", request=request)

        ep, sleeps = endpoint(handler)
        with pytest.raises(TransportError):
            ep.complete(messages(), GenerationParams())
        assert len(sleeps) == 2

    def test_bad_shape(self):
        ep, _ = endpoint(lambda request: httpx.Response(200, json={"nope": 1}))
        with pytest.raises(RequestError):
            ep.complete(messages(), GenerationParams())

    def test_key_from_environment(self, monkeypatch):
        monkeypatch.setenv("EDGEPRIOR_API_KEY", "from-env")
        assert ChatEndpoint("http://x/v1/chat/completions", "m").api_key == "from-env"


class TestMock:
    def test_replay_and_fallback(self, tmp_path):
        d = tmp_path / "f1" / "edgeflow"
        d.mkdir(parents=True)
        (d / "run2.txt").write_text("reply two")
        mock = MockEndpoint(tmp_path)
        key = FixtureKey("f1", "edgeflow", 2)
        assert mock.complete([], GenerationParams(), key).raw_text == "reply two"
        assert mock.complete([], GenerationParams(), key).raw_text == "reply two"
        tagged = FixtureKey("f1", "edgeflow-C6", 2)
        assert mock.complete([], GenerationParams(), tagged).raw_text == "reply two"
        with pytest.raises(MockError):
            mock.complete([], GenerationParams(), FixtureKey("f1", "edgeflow", 3))
        with pytest.raises(MockError):
            mock.complete([], GenerationParams())

    def test_fixture_key_round_trip(self):
        for key in (FixtureKey("a/b", "baseline", 3), FixtureKey("x", "edgeflow", 1, 7)):
            assert FixtureKey.parse(key.relpath()) == key
        assert FixtureKey("x", "edgeflow", 1, 7).relpath() == "x/edgeflow/run1.repair7.txt"

    def test_generate_logs_without_image_bytes(self, tmp_path):
        (tmp_path / "fx" / "f" / "edgeflow").mkdir(parents=True)
        (tmp_path / "fx" / "f" / "edgeflow" / "run1.txt").write_text("ok")
        bundle = build_bundle(EDGEFLOW, IMG, EDGES)
        reply = generate(bundle, None, MockEndpoint(tmp_path / "fx"), FixtureKey("f", EDGEFLOW, 1),
                         log_dir=tmp_path / "log")
        assert reply.raw_text == "ok"
        req = json.loads((tmp_path / "log" / "request.json").read_text())
        assert req["params"] == {"temperature": 0.3, "top_p": 0.8, "max_tokens": 16000}
        images = [p for p in req["messages"][1]["content"] if p["type"] == "image_url"]
        assert len(images) == 2 and all(len(p["sha256"]) == 64 for p in images)
        assert "base64" not in (tmp_path / "log" / "request.json").read_text()
        assert json.loads((tmp_path / "log" / "reply.json").read_text())["raw_text"] == "ok"


class TestExtract:
    def test_mermaid_fence_preferred(self):
        text = "```python\nx = 1\n```\nthen\n```mermaid\nflowchart TD\nA-->B\n```"
        assert extract_code_block(text) == "flowchart TD\nA-->B"

    def test_any_fence(self):
        assert extract_code_block("```\nflowchart LR\n```") == "flowchart LR"

    def test_no_fence(self):
        assert extract_code_block("  flowchart TD\nA --> B  \n") == "flowchart TD\nA --> B"

    def test_unterminated_fence(self):
        assert extract_code_block("```mermaid\nflowchart TD\nA --> B") == "flowchart TD\nA --> B"
