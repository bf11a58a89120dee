"""Chat-completions client for the LLM annotator, plus a deterministic mock.

The wire shape is OpenAI-compatible JSON; the mock mode is selected by an
``endpoint_url`` of the form ``mock:<fixture-path>``.
"""

from __future__ import annotations

import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import httpx

from .errors import BadResponseError, TransportError
from .prompts import PromptBundle


@dataclass
class AnnotatorConfig:
    endpoint_url: str
    model_id: str = "annotator"
    max_output_tokens: int = 4096
    temperature: float | None = None  # None: take the bundle's temperature
    request_timeout: float = 120.0
    max_retries: int = 3
    concurrency_limit: int = 4
    backoff_base: float = 1.0
    api_key_env: str = "TABFORGE_API_KEY"

    def __post_init__(self) -> None:
        if self.concurrency_limit < 1:
            raise ValueError("concurrency_limit must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(frozen=True)
class Completion:
    raw_text: str
    finish_reason: str  # stop | length | error
    latency: float = 0.0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    error: str | None = None


def build_request(bundle: PromptBundle, cfg: AnnotatorConfig) -> dict:
    """Request payload; deterministic so retries are byte-identical."""
    temp = cfg.temperature if cfg.temperature is not None else bundle.sampling_temperature
    return {
        "model": cfg.model_id,
        "messages": [
            {"role": "system", "content": bundle.system_prompt},
            {"role": "user", "content": bundle.user_message()},
        ],
        "temperature": temp,
        "max_tokens": cfg.max_output_tokens,
    }


class MockAnnotator:
    """Replays canned responses from a JSONL fixture.

    Each record is ``{"key": <substring-or-null>, "response": <text>,
    "finish_reason": <optional>}``. Keyed records match when the key occurs in
    the user message; unkeyed records are consumed in file order.
    """

    def __init__(self, fixture_path: str | Path):
        self.keyed: list[tuple[str, dict]] = []
        self.unkeyed: list[dict] = []
        self.calls = 0
        self._cursor = 0
        self._lock = threading.Lock()
        with open(fixture_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                if rec.get("key"):
                    self.keyed.append((rec["key"], rec))
                else:
                    self.unkeyed.append(rec)

    def respond(self, user_message: str) -> Completion:
        with self._lock:
            self.calls += 1
            rec = None
            for key, candidate in self.keyed:
                if key in user_message:
                    rec = candidate
                    break
            if rec is None and self.unkeyed:
                rec = self.unkeyed[self._cursor % len(self.unkeyed)]
                self._cursor += 1
        if rec is None:
            return Completion("", "error", error="mock fixture has no matching record")
        return Completion(rec["response"], rec.get("finish_reason", "stop"))


_mock_cache: dict[str, MockAnnotator] = {}
_mock_cache_lock = threading.Lock()


def _get_mock(endpoint_url: str) -> MockAnnotator:
    path = endpoint_url[len("mock:"):]
    with _mock_cache_lock:
        if path not in _mock_cache:
            _mock_cache[path] = MockAnnotator(path)
        return _mock_cache[path]


def reset_mocks() -> None:
    """Drop cached mock fixtures (test isolation)."""
    with _mock_cache_lock:
        _mock_cache.clear()


def complete(
    bundle: PromptBundle,
    cfg: AnnotatorConfig,
    client: httpx.Client | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> Completion:
    """One completion per call; transient transport failures retried with
    exponential backoff. Truncation is surfaced as finish_reason="length"."""
    if cfg.endpoint_url.startswith("mock:"):
        return _get_mock(cfg.endpoint_url).respond(bundle.user_message())

    payload = build_request(bundle, cfg)
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(cfg.api_key_env)
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"

    own_client = client is None
    if own_client:
        client = httpx.Client(timeout=cfg.request_timeout)
    started = time.monotonic()
    try:
        last_err: Exception | None = None
        for attempt in range(cfg.max_retries + 1):
            if attempt:
                sleep(cfg.backoff_base * (2 ** (attempt - 1)))
            try:
                resp = client.post(cfg.endpoint_url, json=payload, headers=headers)
            except httpx.HTTPError as exc:
                last_err = exc
                continue
            if resp.status_code >= 500:
                last_err = TransportError(f"HTTP {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise BadResponseError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                body = resp.json()
                choice = body["choices"][0]
                text = choice["message"]["content"] or ""
                finish = choice.get("finish_reason") or "stop"
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BadResponseError(f"undecodable completion payload: {exc}") from exc
            usage = body.get("usage") or {}
            return Completion(
                raw_text=text,
                finish_reason=finish if finish in ("stop", "length") else "stop",
                latency=time.monotonic() - started,
                prompt_tokens=usage.get("prompt_tokens", 0),
                completion_tokens=usage.get("completion_tokens", 0),
            )
        raise TransportError(f"exhausted {cfg.max_retries} retries: {last_err}")
    finally:
        if own_client:
            client.close()


def complete_batch(
    bundles: list[PromptBundle],
    cfg: AnnotatorConfig,
    client: httpx.Client | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> list[Completion]:
    """Positionally aligned completions; at most concurrency_limit in flight.

    Per-item failures become error Completions and never abort the batch.
    """
    if not bundles:
        return []
    own_client = client is None and not cfg.endpoint_url.startswith("mock:")
    if own_client:
        client = httpx.Client(timeout=cfg.request_timeout)

    def one(bundle: PromptBundle) -> Completion:
        try:
            return complete(bundle, cfg, client=client, sleep=sleep)
        except Exception as exc:
            return Completion("", "error", error=str(exc))

    try:
        with ThreadPoolExecutor(max_workers=cfg.concurrency_limit) as pool:
            return list(pool.map(one, bundles))
    finally:
        if own_client:
            client.close()
