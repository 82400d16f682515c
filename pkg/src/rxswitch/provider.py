"""Chat-completion providers: a remote HTTP client and a deterministic mock.

The mock answers from the synthetic gold labels with configurable field-swap
and hallucination noise, seeded per note so results are independent of
request order. The HTTP client speaks the common chat-completion wire shape
(messages/model/temperature/top_p/max_tokens) and retries throttle and
server errors with exponential backoff.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol

import httpx

from .corpus import GoldLabel
from .switching import PRESCRIBED_MODALITIES

#: environment variable holding the bearer token (never passed as a flag)
TOKEN_ENV_VAR = "RXSWITCH_API_TOKEN"

#: fabricated reason clauses, guaranteed absent from generated note text
FABRICATIONS = (
    "she is training for a marathon in antarctica",
    "a documented allergy to shellfish prompted the change",
    "her twin sister had the same reaction last spring",
    "the decision followed advice from a telehealth astrologer",
    "she recently adopted three rescue iguanas",
)


class ProviderError(Exception):
    """Raised when a provider cannot produce a response (after retries)."""


@dataclass(frozen=True)
class ProviderReply:
    text: str
    latency_ms: int


@dataclass
class ProviderConfig:
    endpoint: str = "mock"  # URL of a chat-completion endpoint, or "mock"
    model_name: str = "mock-extractor"
    temperature: float = 0.0
    max_response_tokens: int = 500
    top_p: float = 1.0
    max_parallel: int = 4
    max_attempts: int = 4
    backoff_base: float = 1.0
    timeout_s: float = 60.0
    mock_swap_rate: float = 0.0
    mock_hallucination_rate: float = 0.0
    mock_seed: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_response_tokens < 1:
            raise ValueError("max_response_tokens must be >= 1")
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")


class ChatProvider(Protocol):
    def complete(self, note_id: str, messages: list[dict[str, str]],
                 output_format: str) -> ProviderReply: ...


@dataclass(frozen=True)
class MockNoise:
    swap_rate: float = 0.0
    hallucination_rate: float = 0.0
    seed: int = 0


def _note_rng(seed: int, note_id: str) -> random.Random:
    digest = hashlib.sha256(f"{seed}:{note_id}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _render_field(values: frozenset) -> str:
    return ", ".join(sorted(v.value for v in values)) or "none"


def _maybe_swap(rng: random.Random, rendered: str, rate: float) -> str:
    if rng.random() >= rate:
        return rendered
    current = {v.strip() for v in rendered.split(",")}
    candidates = [m.value for m in PRESCRIBED_MODALITIES if m.value not in current]
    return rng.choice(candidates)


def mock_response(note_id: str, gold: GoldLabel, noise: MockNoise,
                  output_format: str) -> str:
    """Well-formed response derived from the gold label.

    With probability swap_rate per field a uniformly different modality name
    is substituted; with probability hallucination_rate a fabricated clause
    (from a list disjoint from the note text) is appended to the reason.
    Deterministic given (noise.seed, note_id).
    """
    rng = _note_rng(noise.seed, note_id)
    started = _maybe_swap(rng, _render_field(gold.started), noise.swap_rate)
    stopped = _maybe_swap(rng, _render_field(gold.stopped), noise.swap_rate)
    reason = gold.reason_text
    if rng.random() < noise.hallucination_rate:
        reason = f"{reason}; also {rng.choice(FABRICATIONS)}"
    if output_format == "structured_object":
        return json.dumps({"started": started, "stopped": stopped,
                           "reason": reason})
    if output_format == "pipe_delimited":
        return f"started: {started} | stopped: {stopped} | reason: {reason}"
    return f"started: {started}\nstopped: {stopped}\nreason: {reason}"


@dataclass
class MockChatProvider:
    """Deterministic provider for synthetic corpora (requires gold labels).

    delay_ms_range > 0 randomizes completion time (exercising result
    ordering); fail_note_ids simulates transport failure after retries.
    """

    gold_by_note: dict[str, GoldLabel]
    noise: MockNoise = field(default_factory=MockNoise)
    delay_ms_range: tuple[int, int] = (0, 0)
    fail_note_ids: frozenset[str] = frozenset()

    def complete(self, note_id: str, messages: list[dict[str, str]],
                 output_format: str) -> ProviderReply:
        if note_id in self.fail_note_ids:
            raise ProviderError(f"transport failure for {note_id} (injected)")
        gold = self.gold_by_note.get(note_id)
        if gold is None:
            raise ProviderError(f"no gold label for note {note_id}")
        delay = 0
        if self.delay_ms_range[1] > 0:
            delay = _note_rng(self.noise.seed ^ 0xD31A7, note_id).randint(
                *self.delay_ms_range)
            time.sleep(delay / 1000.0)
        return ProviderReply(
            text=mock_response(note_id, gold, self.noise, output_format),
            latency_ms=delay,
        )


@dataclass
class HttpChatProvider:
    """Minimal chat-completion client with retry/backoff.

    Retries throttle (429) and server (5xx) statuses and transport errors up
    to config.max_attempts with exponential backoff (base * 2^k). The bearer
    token comes from the environment, never from configuration files.
    """

    config: ProviderConfig
    sleep: Callable[[float], None] = time.sleep
    _client: httpx.Client | None = None

    def _get_client(self) -> httpx.Client:
        if self._client is None:
            self._client = httpx.Client(timeout=self.config.timeout_s)
        return self._client

    def complete(self, note_id: str, messages: list[dict[str, str]],
                 output_format: str) -> ProviderReply:
        payload = {
            "model": self.config.model_name,
            "messages": messages,
            "temperature": self.config.temperature,
            "top_p": self.config.top_p,
            "max_tokens": self.config.max_response_tokens,
        }
        headers = {}
        token = os.environ.get(TOKEN_ENV_VAR)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        start = time.monotonic()
        last_error = "exhausted retries"
        for attempt in range(self.config.max_attempts):
            if attempt:
                self.sleep(self.config.backoff_base * 2 ** (attempt - 1))
            try:
                resp = self._get_client().post(self.config.endpoint,
                                               json=payload, headers=headers)
            except httpx.HTTPError as e:
                last_error = f"transport error: {e}"
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = f"status {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise ProviderError(
                    f"provider rejected request for {note_id}: "
                    f"status {resp.status_code}")
            try:
                text = resp.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError, ValueError) as e:
                raise ProviderError(f"malformed provider payload: {e}") from e
            latency = int((time.monotonic() - start) * 1000)
            return ProviderReply(text=text, latency_ms=latency)
        raise ProviderError(
            f"provider failed for {note_id} after "
            f"{self.config.max_attempts} attempts: {last_error}")


def build_provider(config: ProviderConfig,
                   gold_by_note: dict[str, GoldLabel] | None = None) -> ChatProvider:
    if config.endpoint == "mock":
        if gold_by_note is None:
            raise ValueError("mock provider requires gold labels")
        return MockChatProvider(
            gold_by_note=gold_by_note,
            noise=MockNoise(swap_rate=config.mock_swap_rate,
                            hallucination_rate=config.mock_hallucination_rate,
                            seed=config.mock_seed),
        )
    return HttpChatProvider(config=config)
