"""Chat-completion access with usage accounting.

Providers are pluggable: a generic HTTP chat service client, a scripted
replay provider keyed by the digest of the full message list (the
workhorse of the offline test suite), and a trivial canned provider.
Every completion is tallied in a ``UsageLedger`` under a phase name so
call counts and token totals per question can be reported.
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

from .errors import (
    ContractError,
    DataError,
    EmptyCompletionError,
    MissingFixtureError,
    TransportError,
)

_ROLES = ("system", "user", "assistant")

PHASES = ("initial_planning", "replanning", "reasoning")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in _ROLES:
            raise ContractError(f"role must be one of {_ROLES}, got {self.role!r}")
        if self.role in ("user", "assistant") and not self.content:
            raise ContractError(f"{self.role} message content must be non-empty")


@dataclass(frozen=True)
class CompletionResult:
    text: str
    prompt_tokens: int
    completion_tokens: int
    estimated: bool = False  # token counts estimated rather than provider-reported


@dataclass
class LlmParams:
    model: str = ""
    temperature: float = 0.0
    max_output: int = 1024


def estimate_tokens(text: str) -> int:
    """Fallback token estimate when a provider reports no usage: ceil(chars / 4)."""
    return math.ceil(len(text) / 4)


def digest_messages(messages: list[ChatMessage]) -> str:
    payload = json.dumps(
        [[m.role, m.content] for m in messages], ensure_ascii=False, separators=(",", ":")
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class PhaseUsage:
    calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    estimated_calls: int = 0

    def as_dict(self) -> dict:
        return {
            "calls": self.calls,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "estimated_calls": self.estimated_calls,
        }


class UsageLedger:
    """Thread-safe, monotonically growing per-phase usage counters.

    Totals are derived from the phases, so the phase breakdown always sums
    to the totals regardless of call interleaving.
    """

    def __init__(self):
        self._phases: dict[str, PhaseUsage] = {}
        self._lock = threading.Lock()

    def record(self, phase: str, result: CompletionResult) -> None:
        with self._lock:
            usage = self._phases.setdefault(phase, PhaseUsage())
            usage.calls += 1
            usage.prompt_tokens += result.prompt_tokens
            usage.completion_tokens += result.completion_tokens
            if result.estimated:
                usage.estimated_calls += 1

    @property
    def calls(self) -> int:
        with self._lock:
            return sum(u.calls for u in self._phases.values())

    @property
    def prompt_tokens(self) -> int:
        with self._lock:
            return sum(u.prompt_tokens for u in self._phases.values())

    @property
    def completion_tokens(self) -> int:
        with self._lock:
            return sum(u.completion_tokens for u in self._phases.values())

    def snapshot(self) -> dict:
        with self._lock:
            phases = {name: PhaseUsage(**u.as_dict().copy()) for name, u in self._phases.items()}
        for name in PHASES:
            phases.setdefault(name, PhaseUsage())
        ordered = dict(sorted(phases.items()))
        return {
            "calls": sum(u.calls for u in ordered.values()),
            "prompt_tokens": sum(u.prompt_tokens for u in ordered.values()),
            "completion_tokens": sum(u.completion_tokens for u in ordered.values()),
            "estimated_calls": sum(u.estimated_calls for u in ordered.values()),
            "phases": {name: u.as_dict() for name, u in ordered.items()},
        }

    def merge_snapshot(self, snapshot: dict) -> None:
        with self._lock:
            for name, values in snapshot["phases"].items():
                usage = self._phases.setdefault(name, PhaseUsage())
                usage.calls += values["calls"]
                usage.prompt_tokens += values["prompt_tokens"]
                usage.completion_tokens += values["completion_tokens"]
                usage.estimated_calls += values["estimated_calls"]


def _estimated_usage(messages: list[ChatMessage], text: str) -> tuple[int, int]:
    prompt = sum(estimate_tokens(m.content) for m in messages)
    return prompt, estimate_tokens(text)


class ScriptedChatProvider:
    """Replays fixture text keyed by the digest of the message list.

    Fixture files are line-JSON records ``{"digest", "response_text"}``.
    A miss raises ``MissingFixtureError`` naming the digest, which makes
    prompt drift loud in tests.
    """

    def __init__(self, fixtures: dict[str, str] | None = None, identity: str = "scripted"):
        self._fixtures = dict(fixtures) if fixtures else {}
        self.identity = identity

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedChatProvider":
        p = Path(path)
        if not p.exists():
            raise DataError(f"scripted chat fixture not found: {p}")
        fixtures: dict[str, str] = {}
        with p.open("r", encoding="utf-8") as fp:
            for line in fp:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                fixtures[obj["digest"]] = obj["response_text"]
        return cls(fixtures, identity=f"scripted:{p.name}")

    def add(self, messages: list[ChatMessage], response_text: str) -> str:
        digest = digest_messages(messages)
        self._fixtures[digest] = response_text
        return digest

    def complete(self, messages: list[ChatMessage], params: LlmParams) -> CompletionResult:
        digest = digest_messages(messages)
        if digest not in self._fixtures:
            raise MissingFixtureError(digest)
        text = self._fixtures[digest]
        prompt_tokens, completion_tokens = _estimated_usage(messages, text)
        return CompletionResult(text, prompt_tokens, completion_tokens, estimated=True)


def write_chat_fixtures(path: str | Path, records: Iterable[tuple[str, str]]) -> None:
    """Append ``(digest, response_text)`` records to a fixture file."""
    with Path(path).open("a", encoding="utf-8") as fp:
        for digest, text in records:
            fp.write(
                json.dumps({"digest": digest, "response_text": text}, ensure_ascii=False) + "\n"
            )


class CannedChatProvider:
    """Returns one fixed response regardless of input; smoke-test provider."""

    def __init__(self, text: str = "{}"):
        self.text = text
        self.identity = "canned"

    def complete(self, messages: list[ChatMessage], params: LlmParams) -> CompletionResult:
        prompt_tokens, completion_tokens = _estimated_usage(messages, self.text)
        return CompletionResult(self.text, prompt_tokens, completion_tokens, estimated=True)


class HttpChatProvider:
    """Client for a generic HTTP chat-completion service.

    Request: ``POST {"model", "messages": [{"role", "content"}...],
    "temperature"}``. Response: ``{"choices": [{"message": {"content"}}],
    "usage": {"prompt_tokens", "completion_tokens"}}``. The API key is
    read from ``KARPA_LLM_API_KEY`` and sent as a bearer token.
    """

    def __init__(self, endpoint: str, api_key: str | None = None, timeout: float = 120.0):
        self.endpoint = endpoint
        self.api_key = api_key
        self.timeout = timeout
        self.identity = f"http:{endpoint}"

    def complete(self, messages: list[ChatMessage], params: LlmParams) -> CompletionResult:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": params.model,
            "messages": [{"role": m.role, "content": m.content} for m in messages],
            "temperature": params.temperature,
        }
        try:
            resp = requests.post(self.endpoint, json=body, headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"chat request failed: {exc}") from exc
        if resp.status_code >= 500:
            raise TransportError(f"chat service returned {resp.status_code}")
        if resp.status_code != 200:
            raise DataError(f"chat service returned {resp.status_code}: {resp.text[:200]}")
        payload = resp.json()
        text = payload["choices"][0]["message"]["content"]
        usage = payload.get("usage")
        if usage is not None:
            return CompletionResult(
                text,
                int(usage.get("prompt_tokens", 0)),
                int(usage.get("completion_tokens", 0)),
            )
        prompt_tokens, completion_tokens = _estimated_usage(messages, text)
        return CompletionResult(text, prompt_tokens, completion_tokens, estimated=True)


class LlmGateway:
    """Validates, retries, completes, and tallies usage by phase."""

    def __init__(
        self,
        provider,
        ledger: UsageLedger | None = None,
        retries: int = 3,
        backoff: float = 0.25,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.provider = provider
        self.ledger = ledger if ledger is not None else UsageLedger()
        self._retries = retries
        self._backoff = backoff
        self._sleep = sleep

    def complete(
        self, messages: list[ChatMessage], params: LlmParams, phase: str = "other"
    ) -> CompletionResult:
        if not messages:
            raise ContractError("complete requires at least one message")
        if messages[-1].role != "user":
            raise ContractError("message list must end with a user message")
        delay = self._backoff
        result: CompletionResult | None = None
        for attempt in range(self._retries):
            try:
                result = self.provider.complete(messages, params)
                break
            except TransportError:
                if attempt == self._retries - 1:
                    raise
                self._sleep(delay)
                delay *= 2
        assert result is not None
        if not result.text.strip():
            raise EmptyCompletionError("provider returned empty completion text")
        self.ledger.record(phase, result)
        return result
