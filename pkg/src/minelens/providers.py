"""Chat-completion providers: HTTP adapter, deterministic mock, throttling.

Model identity is configuration. Everything above this layer talks to the
ChatProvider protocol, so swapping a hosted model for the offline mock is a
constructor argument, not a code change. Credentials never enter request
records; the log redacts known secret keys.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import requests

from .errors import ConfigError, ProviderRejected, ProviderTransient

DEFAULT_TIMEOUT_S = 60.0
DEFAULT_MAX_INFLIGHT = 4
_SECRET_KEYS = {"authorization", "api_key", "provider_key", "key", "token"}


@dataclass(frozen=True)
class ChatRequest:
    """One provider call. Images travel as raw RGB byte planes so request
    hashing stays independent of any codec."""

    system: str
    user: str
    images: tuple[tuple[str, int, int, bytes], ...] = ()  # (role, h, w, rgb bytes)
    temperature: float = 0.2
    frequency_penalty: float = 0.3
    max_tokens: int = 400

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.system.encode())
        h.update(b"\x00")
        h.update(self.user.encode())
        for role, height, width, data in self.images:
            h.update(f"\x00{role}:{height}x{width}\x00".encode())
            h.update(data)
        h.update(f"\x00{self.temperature}|{self.frequency_penalty}|{self.max_tokens}".encode())
        return h.hexdigest()


class ChatProvider(Protocol):
    name: str

    def complete(self, request: ChatRequest) -> str: ...


def _redact(obj):
    if isinstance(obj, dict):
        return {
            k: "***" if k.lower() in _SECRET_KEYS else _redact(v) for k, v in obj.items()
        }
    if isinstance(obj, list):
        return [_redact(v) for v in obj]
    return obj


class RequestLog:
    """Append-only JSON-lines record of provider traffic, secrets redacted."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def record(self, event: dict) -> None:
        line = json.dumps(_redact(event), sort_keys=True)
        with self._lock:
            with self.path.open("a") as fh:
                fh.write(line + "\n")


class HttpChatProvider:
    """Adapter for chat-completions-style HTTP APIs.

    Endpoint, key and model come from arguments or the PROVIDER_URL,
    PROVIDER_KEY and PROVIDER_MODEL environment variables. 4xx responses are
    the caller's fault and never retried here; 5xx and transport errors
    surface as ProviderTransient for the retry loop upstream.
    """

    def __init__(
        self,
        url: str | None = None,
        key: str | None = None,
        model: str | None = None,
        *,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        session: requests.Session | None = None,
    ):
        self.url = url or os.environ.get("PROVIDER_URL", "")
        self._key = key or os.environ.get("PROVIDER_KEY", "")
        self.model = model or os.environ.get("PROVIDER_MODEL", "")
        if not self.url or not self.model:
            raise ConfigError("provider URL and model must be configured")
        self.timeout_s = timeout_s
        self.session = session or requests.Session()
        self.name = f"http:{self.model}"

    def _image_part(self, role: str, height: int, width: int, data: bytes) -> dict:
        import base64
        import io

        from PIL import Image

        img = Image.frombytes("RGB", (width, height), data)
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        uri = "data:image/png;base64," + base64.b64encode(buf.getvalue()).decode()
        return {"type": "image_url", "image_url": {"url": uri, "detail": role}}

    def complete(self, request: ChatRequest) -> str:
        content: list[dict] = [{"type": "text", "text": request.user}]
        content += [self._image_part(*img) for img in request.images]
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": content},
            ],
            "temperature": request.temperature,
            "frequency_penalty": request.frequency_penalty,
            "max_tokens": request.max_tokens,
        }
        headers = {"Authorization": f"Bearer {self._key}"} if self._key else {}
        try:
            resp = self.session.post(
                self.url, json=payload, headers=headers, timeout=self.timeout_s
            )
        except requests.RequestException as exc:
            raise ProviderTransient(f"transport failure: {exc}") from exc
        if 400 <= resp.status_code < 500:
            raise ProviderRejected(f"provider returned {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 500:
            raise ProviderTransient(f"provider returned {resp.status_code}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, LookupError) as exc:
            raise ProviderTransient(f"malformed provider response: {exc}") from exc


_WORDS = (
    "terraced benches cut into pale exposed strata beside the pit",
    "a settlement grid presses against the excavation boundary",
    "spoil heaps rise east of the processing ponds",
    "haul roads thread between tailings cells and the rim",
    "sparse vegetation persists along the drainage line",
    "water in the retention basin reads dark and still",
    "bare overburden dominates the northern quarter",
    "conveyor corridors link the pit floor to the plant",
)


class MockProvider:
    """Deterministic offline stand-in: output is a pure function of the seed
    and the request digest. Recognizes judge and retrieval prompts by their
    fixed markers and answers in the shape each caller parses."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.name = f"mock:{seed}"
        self.calls = 0
        self._lock = threading.Lock()

    def _hash(self, request: ChatRequest) -> int:
        h = hashlib.sha256(f"{self.seed}|{request.digest()}".encode())
        return int.from_bytes(h.digest()[:8], "little")

    def complete(self, request: ChatRequest) -> str:
        with self._lock:
            self.calls += 1
        h = self._hash(request)

        dim = None
        for line in request.user.splitlines():
            if line.startswith("Dimension: "):
                dim = line.removeprefix("Dimension: ").strip()
                break
        if dim is not None:
            score = 4 + h % 2
            return json.dumps(
                {"dimension": dim, "score": score, "rationale": f"consistent with anchor {score}"}
            )

        if "[src:" in request.user:
            ids = []
            for part in request.user.split("[src:")[1:]:
                cid = part.split("]", 1)[0]
                if cid not in ids:
                    ids.append(cid)
            cited = " ".join(f"[src:{cid}]" for cid in ids)
            return f"Based on the provided context, the evidence indicates the following. {cited}"

        picks = [_WORDS[(h >> (8 * i)) % len(_WORDS)] for i in range(4)]
        sentences = ". ".join(p[0].upper() + p[1:] for p in dict.fromkeys(picks))
        return f"The scene shows an active open-pit operation. {sentences}."


class ScriptedProvider:
    """Replays a fixed queue of responses; an exception instance in the queue
    is raised instead of returned. For retry and failure-path tests."""

    def __init__(self, script: list):
        self.script = list(script)
        self.name = "scripted"
        self.calls = 0

    def complete(self, request: ChatRequest) -> str:
        self.calls += 1
        if not self.script:
            raise AssertionError("scripted provider exhausted")
        item = self.script.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


class ThrottledProvider:
    """Caps concurrent in-flight requests to the wrapped provider."""

    def __init__(self, inner: ChatProvider, max_inflight: int = DEFAULT_MAX_INFLIGHT):
        self.inner = inner
        self.name = inner.name
        self._gate = threading.BoundedSemaphore(max_inflight)

    def complete(self, request: ChatRequest) -> str:
        with self._gate:
            return self.inner.complete(request)


def mock_provider(seed: int = 0) -> MockProvider:
    return MockProvider(seed)
