"""Prompt bundles and chat-completions access for the vision-language model.

Two endpoint kinds share one call shape, ``complete(messages, params, key)``:
:class:`ChatEndpoint` speaks the OpenAI-compatible chat completions protocol
over HTTP, :class:`MockEndpoint` replays text fixtures from disk.
"""
from __future__ import annotations

import base64
import hashlib
import io
import json
import logging
import os
import re
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import httpx
import numpy as np
from PIL import Image

from .imaging import EdgeMap, RasterImage

__all__ = [
    "BASELINE",
    "EDGEFLOW",
    "CONDITIONS",
    "GenerationParams",
    "PromptBundle",
    "ModelReply",
    "ConfigurationError",
    "TransportError",
    "RequestError",
    "MockError",
    "ChatEndpoint",
    "MockEndpoint",
    "FixtureKey",
    "load_prompt",
    "encode_png",
    "build_bundle",
    "bundle_messages",
    "generate",
    "extract_code_block",
]

log = logging.getLogger(__name__)

BASELINE = "baseline"
EDGEFLOW = "edgeflow"
CONDITIONS = (BASELINE, EDGEFLOW)
PROMPT_VERSION = "v1"
API_KEY_ENV = "EDGEPRIOR_API_KEY"


class ConfigurationError(ValueError):
    pass


class TransportError(RuntimeError):
    """Transient failures that persisted through every retry."""


class RequestError(RuntimeError):
    def __init__(self, status: int, body: str):
        self.status = status
        self.body = body
        super().__init__(f"endpoint rejected request with HTTP {status}: {body[:500]}")


class MockError(LookupError):
    pass


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.3
    top_p: float = 0.8
    max_tokens: int = 16000

    def __post_init__(self):
        if self.temperature < 0:
            raise ConfigurationError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ConfigurationError("top_p must lie in (0, 1]")
        if self.max_tokens < 1:
            raise ConfigurationError("max_tokens must be >= 1")


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str
    images: Tuple[bytes, ...]
    condition: str

    def __post_init__(self):
        expected = {BASELINE: 1, EDGEFLOW: 2}.get(self.condition)
        if expected is None:
            raise ConfigurationError(f"unknown condition {self.condition!r}")
        if len(self.images) != expected:
            raise ConfigurationError(
                f"{self.condition} bundle needs {expected} image(s), got {len(self.images)}"
            )


@dataclass
class ModelReply:
    raw_text: str
    model_id: str
    latency: float = 0.0


@dataclass(frozen=True)
class FixtureKey:
    """Identifies one model call: flowchart id, condition and 1-based run index.

    ``attempt`` is set for repair calls (1..10) and selects a separate fixture.
    """

    flowchart_id: str
    condition: str
    run: int
    attempt: Optional[int] = None

    def relpath(self) -> str:
        stem = f"run{self.run}"
        if self.attempt is not None:
            stem += f".repair{self.attempt}"
        return f"{self.flowchart_id}/{self.condition}/{stem}.txt"

    @classmethod
    def parse(cls, text: str) -> "FixtureKey":
        m = re.fullmatch(r"(.+)/([^/]+)/run(\d+)(?:\.repair(\d+))?(?:\.txt)?", text)
        if not m:
            raise ValueError(f"malformed fixture key {text!r}")
        attempt = int(m.group(4)) if m.group(4) else None
        return cls(m.group(1), m.group(2), int(m.group(3)), attempt)


def load_prompt(name: str, version: str = PROMPT_VERSION) -> str:
    ref = resources.files("edgeprior") / "prompts" / f"{name}_{version}.txt"
    return ref.read_text(encoding="utf-8").strip()


def encode_png(img) -> bytes:
    """PNG-encode so binary edge maps survive transport losslessly."""
    if isinstance(img, bytes):
        return img
    if isinstance(img, EdgeMap):
        arr = img.data
    elif isinstance(img, RasterImage):
        arr = img.pixels
    else:
        arr = np.asarray(img, dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def build_bundle(condition: str, prep_image, edge_image=None) -> PromptBundle:
    if condition == EDGEFLOW and edge_image is None:
        raise ConfigurationError("edgeflow condition requires an edge map")
    if condition == BASELINE and edge_image is not None:
        raise ConfigurationError("baseline condition takes a single image")
    if condition not in CONDITIONS:
        raise ConfigurationError(f"unknown condition {condition!r}")
    images = [encode_png(prep_image)]
    if edge_image is not None:
        images.append(encode_png(edge_image))
    return PromptBundle(
        system_text=load_prompt("system"),
        user_text=load_prompt(f"user_{condition}"),
        images=tuple(images),
        condition=condition,
    )


def bundle_messages(bundle: PromptBundle) -> List[dict]:
    # user text first, then the preprocessed image, then the edge map
    content = [{"type": "text", "text": bundle.user_text}]
    for png in bundle.images:
        url = "data:image/png;base64," + base64.b64encode(png).decode("ascii")
        content.append({"type": "image_url", "image_url": {"url": url}})
    return [
        {"role": "system", "content": bundle.system_text},
        {"role": "user", "content": content},
    ]


def _redact_images(messages: Sequence[dict]) -> List[dict]:
    out = []
    for msg in messages:
        content = msg["content"]
        if isinstance(content, list):
            parts = []
            for part in content:
                if part.get("type") == "image_url":
                    url = part["image_url"]["url"]
                    raw = base64.b64decode(url.split(",", 1)[1])
                    parts.append({"type": "image_url", "sha256": hashlib.sha256(raw).hexdigest(),
                                  "bytes": len(raw)})
                else:
                    parts.append(part)
            content = parts
        out.append({"role": msg["role"], "content": content})
    return out


class ChatEndpoint:
    """OpenAI-compatible ``/chat/completions`` client with bounded retries.

    Timeouts, connection failures and 5xx replies are retried with
    exponential backoff; any 4xx reply is surfaced immediately.
    """

    def __init__(self, url: str, model: str, api_key: Optional[str] = None,
                 api_key_env: str = API_KEY_ENV, timeout: float = 300.0,
                 max_attempts: int = 3, backoff: float = 1.0,
                 transport: Optional[httpx.BaseTransport] = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.url = url.rstrip("/")
        if not self.url.endswith("/chat/completions"):
            self.url += "/chat/completions"
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(api_key_env)
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._transport = transport
        self._sleep = sleep

    def _payload(self, messages, params: GenerationParams) -> dict:
        return {
            "model": self.model,
            "messages": list(messages),
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
        }

    def complete(self, messages, params: GenerationParams, key: Optional[FixtureKey] = None) -> ModelReply:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = self._payload(messages, params)
        last_error: Optional[Exception] = None
        with httpx.Client(timeout=self.timeout, transport=self._transport) as client:
            for attempt in range(self.max_attempts):
                if attempt:
                    self._sleep(self.backoff * 2 ** (attempt - 1))
                start = time.perf_counter()
                try:
                    resp = client.post(self.url, json=payload, headers=headers)
                except httpx.TransportError as exc:
                    last_error = exc
                    log.warning("transport failure on attempt %d: %s", attempt + 1, exc)
                    continue
                if resp.status_code >= 500:
                    last_error = RequestError(resp.status_code, resp.text)
                    log.warning("HTTP %d on attempt %d", resp.status_code, attempt + 1)
                    continue
                if resp.status_code >= 400:
                    raise RequestError(resp.status_code, resp.text)
                latency = time.perf_counter() - start
                body = resp.json()
                try:
                    text = body["choices"][0]["message"]["content"] or ""
                except (KeyError, IndexError, TypeError) as exc:
                    raise RequestError(resp.status_code, f"unexpected response shape: {body!r}") from exc
                return ModelReply(text, body.get("model", self.model), latency)
        raise TransportError(f"gave up after {self.max_attempts} attempts: {last_error}")


class MockEndpoint:
    """Replays ``<id>/<condition>/run<k>.txt`` fixtures.

    A tagged condition such as ``edgeflow-C3`` (used by sweeps) falls back to
    the plain ``edgeflow`` directory when no tagged fixture exists.
    """

    def __init__(self, fixtures_dir: Union[str, Path], model_id: str = "mock"):
        self.root = Path(fixtures_dir)
        self.model = model_id

    def path_for(self, key: FixtureKey) -> Path:
        path = self.root / key.relpath()
        if not path.exists() and "-" in key.condition:
            base = FixtureKey(key.flowchart_id, key.condition.split("-", 1)[0], key.run, key.attempt)
            alt = self.root / base.relpath()
            if alt.exists():
                return alt
        return path

    def complete(self, messages, params: GenerationParams, key: Optional[FixtureKey] = None) -> ModelReply:
        if key is None:
            raise MockError("mock endpoint needs a fixture key")
        path = self.path_for(key)
        if not path.is_file():
            raise MockError(f"no fixture for {key.relpath()}")
        return ModelReply(path.read_text(encoding="utf-8"), self.model, 0.0)


def _persist(log_dir: Optional[Path], name: str, doc: dict) -> None:
    if log_dir is None:
        return
    log_dir.mkdir(parents=True, exist_ok=True)
    (log_dir / name).write_text(json.dumps(doc, ensure_ascii=False, indent=2), encoding="utf-8")


def generate(bundle: PromptBundle, params: Optional[GenerationParams], endpoint,
             key: Optional[FixtureKey] = None, log_dir: Optional[Path] = None) -> ModelReply:
    """Send one multimodal request; request and reply are logged before returning."""
    params = params or GenerationParams()
    messages = bundle_messages(bundle)
    log_dir = Path(log_dir) if log_dir is not None else None
    _persist(log_dir, "request.json", {
        "model": getattr(endpoint, "model", None),
        "condition": bundle.condition,
        "key": key.relpath() if key else None,
        "params": {"temperature": params.temperature, "top_p": params.top_p,
                   "max_tokens": params.max_tokens},
        "messages": _redact_images(messages),
    })
    reply = endpoint.complete(messages, params, key)
    _persist(log_dir, "reply.json", {"model_id": reply.model_id, "latency": reply.latency,
                                     "raw_text": reply.raw_text})
    return reply


_FENCE_RE = re.compile(r"```[ \t]*([A-Za-z0-9_+-]*)[^\n]*\n(.*?)(?:```|\Z)", re.S)


def extract_code_block(raw_text: str) -> str:
    """First ```mermaid fence, else the first fence of any tag, else the stripped text."""
    blocks = _FENCE_RE.findall(raw_text)
    for tag, body in blocks:
        if tag.lower() == "mermaid":
            return body.strip("\n").rstrip()
    if blocks:
        return blocks[0][1].strip("\n").rstrip()
    return raw_text.strip()
