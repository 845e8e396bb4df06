"""Single client abstraction for every LLM-assisted step.

All operators go through one gateway that handles the per-operator
temperature policy, transparent response caching, bounded retries with
exponential backoff, and backend selection. The mock backend resolves
requests against an on-disk fixture directory and fails loudly on misses,
which keeps the whole pipeline byte-reproducible offline.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path

import requests

from . import prompts

# Decoding temperatures per operator. Conversion and generation run cold for
# schema stability; perturbation runs warm for semantic diversity.
OPERATOR_TEMPERATURES = {
    "convert": 0.1,
    "perturb": 0.7,
    "generate": 0.1,
    "llm_only_rewrite": 0.2,
    "llm_only_critique": 0.0,
}

DEFAULT_RETRIES = 3
DEFAULT_BACKOFF_SECONDS = 0.5


def temperature_for(operator: str) -> float:
    if operator not in OPERATOR_TEMPERATURES:
        raise KeyError(f"unknown operator {operator!r}")
    return OPERATOR_TEMPERATURES[operator]


class GatewayError(RuntimeError):
    """Raised when a completion cannot be obtained; carries the template id."""

    def __init__(self, template_id: str, message: str):
        self.template_id = template_id
        super().__init__(f"[{template_id}] {message}")


class TransientBackendError(RuntimeError):
    """Internal marker for failures worth retrying (network, 5xx)."""


class MockFixtureMissing(GatewayError):
    pass


@dataclass(frozen=True)
class ChatRequest:
    template_id: str
    messages: tuple[tuple[str, str], ...]
    temperature: float
    model: str
    seed: int | None = None
    # Raw template variables; used only to key mock fixtures.
    variables: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("messages must be nonempty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature out of range: {self.temperature}")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    backend: str  # live | mock | cache
    latency_ms: int = 0


def variables_digest(variables: dict[str, str]) -> str:
    """Stable digest of template variables; keys mock fixtures."""
    canon = json.dumps({k: str(v) for k, v in variables.items()}, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:24]


def cache_key(req: ChatRequest) -> str:
    canon = json.dumps(
        {
            "model": req.model,
            "temperature": repr(req.temperature),
            "seed": req.seed,
            "messages": [list(m) for m in req.messages],
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


class MockBackend:
    """Deterministic backend resolving (template_id, variables digest) fixtures."""

    name = "mock"

    def __init__(self, fixtures_dir: str | Path):
        self.fixtures_dir = Path(fixtures_dir)

    def fixture_path(self, template_id: str, variables: dict[str, str]) -> Path:
        return self.fixtures_dir / template_id / f"{variables_digest(variables)}.txt"

    def complete(self, req: ChatRequest) -> str:
        path = self.fixture_path(req.template_id, dict(req.variables))
        if not path.is_file():
            raise MockFixtureMissing(
                req.template_id,
                f"no mock fixture at {path} (digest {path.stem})",
            )
        return path.read_text(encoding="utf-8")


class HttpBackend:
    """Chat-completion backend speaking the Ollama-compatible /api/chat shape."""

    name = "live"

    def __init__(self, endpoint: str, timeout_seconds: float = 120.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout_seconds = timeout_seconds

    def complete(self, req: ChatRequest) -> str:
        payload = {
            "model": req.model,
            "messages": [{"role": role, "content": content} for role, content in req.messages],
            "stream": False,
            "options": {"temperature": req.temperature},
        }
        if req.seed is not None:
            payload["options"]["seed"] = req.seed
        try:
            resp = requests.post(
                f"{self.endpoint}/api/chat", json=payload, timeout=self.timeout_seconds
            )
        except requests.RequestException as exc:
            raise TransientBackendError(str(exc)) from exc
        if resp.status_code >= 500:
            raise TransientBackendError(f"server error {resp.status_code}")
        if resp.status_code != 200:
            raise GatewayError(req.template_id, f"backend returned {resp.status_code}: {resp.text[:200]}")
        body = resp.json()
        message = body.get("message") or {}
        return message.get("content", "")


class LlmGateway:
    """Shared, thread-safe front door for all model calls."""

    def __init__(
        self,
        backend,
        model: str,
        cache_dir: str | Path | None = None,
        retries: int = DEFAULT_RETRIES,
        backoff_seconds: float = DEFAULT_BACKOFF_SECONDS,
        sleep=time.sleep,
    ):
        self.backend = backend
        self.model = model
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.retries = retries
        self.backoff_seconds = backoff_seconds
        self._sleep = sleep
        self.calls: list[tuple[str, str]] = []  # (template_id, digest) in call order

    # -- request construction -------------------------------------------

    def request(
        self,
        template_id: str,
        variables: dict[str, str],
        operator: str | None = None,
        temperature: float | None = None,
        seed: int | None = None,
        model: str | None = None,
    ) -> ChatRequest:
        if temperature is None:
            if operator is None:
                raise ValueError("either operator or temperature must be given")
            temperature = temperature_for(operator)
        messages = prompts.render(template_id, variables)
        return ChatRequest(
            template_id=template_id,
            messages=tuple(messages),
            temperature=temperature,
            model=model or self.model,
            seed=seed,
            variables=tuple(sorted((k, str(v)) for k, v in variables.items())),
        )

    def call(
        self,
        template_id: str,
        variables: dict[str, str],
        operator: str | None = None,
        temperature: float | None = None,
        seed: int | None = None,
        model: str | None = None,
    ) -> str:
        """Render, complete, and return the model text."""
        req = self.request(template_id, variables, operator, temperature, seed, model)
        return self.complete(req).text

    # -- completion ------------------------------------------------------

    def complete(self, req: ChatRequest) -> ChatResponse:
        self.calls.append((req.template_id, variables_digest(dict(req.variables))))
        cached = self._cache_read(req)
        if cached is not None:
            return ChatResponse(text=cached, backend="cache", latency_ms=0)

        last_transient: Exception | None = None
        for attempt in range(self.retries):
            if attempt:
                self._sleep(self.backoff_seconds * (2 ** (attempt - 1)))
            started = time.monotonic()
            try:
                text = self.backend.complete(req)
            except TransientBackendError as exc:
                last_transient = exc
                continue
            latency_ms = int((time.monotonic() - started) * 1000)
            if not text:
                raise GatewayError(req.template_id, "empty completion")
            self._cache_write(req, text)
            return ChatResponse(text=text, backend=self.backend.name, latency_ms=latency_ms)
        raise GatewayError(
            req.template_id,
            f"exhausted {self.retries} attempts: {last_transient}",
        )

    # -- cache -----------------------------------------------------------

    def _cache_path(self, req: ChatRequest) -> Path | None:
        if self.cache_dir is None:
            return None
        return self.cache_dir / f"{cache_key(req)}.txt"

    def _cache_read(self, req: ChatRequest) -> str | None:
        path = self._cache_path(req)
        if path is None or not path.is_file():
            return None
        return path.read_text(encoding="utf-8")

    def _cache_write(self, req: ChatRequest, text: str) -> None:
        path = self._cache_path(req)
        if path is None:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".tmp{os.getpid()}")
        tmp.write_text(text, encoding="utf-8")
        tmp.replace(path)
