"""Chat-endpoint transport and templating for ranker/scorer backends.

Templates are editable text files with ``[system]``/``[user]`` sections and
``{slot}`` placeholders.  The client speaks the common chat-completion JSON
protocol; a deterministic stub transport makes the whole pipeline runnable
and testable without any network.
"""

from __future__ import annotations

import logging
import os
import re
import string
import threading
import time
from dataclasses import dataclass
from importlib import resources as importlib_resources
from pathlib import Path
from typing import Callable, Mapping, Sequence

import requests

from .corpus import PromptSpec, lattice
from .scoring import MidpointScorer

logger = logging.getLogger(__name__)

ROLES = ("ranker", "scorer")

# Full slot inventory; a template may reference any subset, but must cover
# the required slots of its role.
SLOTS = frozenset(
    {
        "essay_1",
        "essay_2",
        "essay",
        "features_block",
        "candidate_scores",
        "score_min",
        "score_max",
        "prompt_topic",
    }
)
REQUIRED_SLOTS = {
    "ranker": frozenset({"essay_1", "essay_2"}),
    "scorer": frozenset({"essay", "candidate_scores"}),
}


class TemplateError(Exception):
    """A template is malformed or a rendering slot is missing."""


class TransportError(Exception):
    """A completion request failed; ``kind`` classifies the failure."""

    def __init__(self, message: str, kind: str = "transport", retryable: bool = True):
        super().__init__(message)
        self.kind = kind  # transport | auth | rate_limit | server
        self.retryable = retryable


def _referenced_slots(text: str) -> set[str]:
    fields = set()
    for _, field_name, _, _ in string.Formatter().parse(text):
        if field_name:
            fields.add(field_name)
    return fields


@dataclass(frozen=True)
class PromptTemplate:
    """System and user message templates for one role and language."""

    role: str
    language: str
    system: str
    user: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise TemplateError(f"unknown template role {self.role!r}")
        referenced = self.referenced_slots()
        unknown = referenced - SLOTS
        if unknown:
            raise TemplateError(f"template references unknown slot(s): {sorted(unknown)}")
        missing = REQUIRED_SLOTS[self.role] - referenced
        if missing:
            raise TemplateError(
                f"{self.role} template must reference slot(s): {sorted(missing)}"
            )

    def referenced_slots(self) -> set[str]:
        return _referenced_slots(self.system) | _referenced_slots(self.user)


def _parse_template_file(text: str) -> tuple[str, str]:
    match = re.match(r"\s*\[system\]\n(.*?)\n?\[user\]\n(.*)", text, re.DOTALL)
    if not match:
        raise TemplateError("template file needs [system] and [user] sections")
    return match.group(1).strip(), match.group(2).strip()


def load_template(role: str, language: str, path: str | Path | None = None) -> PromptTemplate:
    """Load a template file, or the packaged default for (role, language)."""
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
    else:
        resource = importlib_resources.files("rankscore").joinpath(
            f"templates/{role}_{language}.txt"
        )
        try:
            text = resource.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise TemplateError(f"no default template for role={role} language={language}") from None
    system, user = _parse_template_file(text)
    return PromptTemplate(role, language, system, user)


def render(template: PromptTemplate, bindings: Mapping[str, object]) -> list[dict[str, str]]:
    """Fill a template's slots and return system+user chat messages."""
    missing = template.referenced_slots() - set(bindings)
    if missing:
        raise TemplateError(f"missing slot(s): {', '.join(sorted(missing))}")
    values = {k: str(v) for k, v in bindings.items()}
    return [
        {"role": "system", "content": template.system.format_map(values)},
        {"role": "user", "content": template.user.format_map(values)},
    ]


def render_candidates(scores: Sequence[int]) -> str:
    return ", ".join(str(s) for s in scores)


@dataclass(frozen=True)
class EndpointConfig:
    """Where and how to call a chat-completion endpoint."""

    base_url: str
    model: str
    token_env: str = "RANKSCORE_API_TOKEN"
    temperature: float = 0.0
    max_tokens: int = 32
    timeout: float = 30.0
    max_attempts: int = 3
    backoff: float = 0.5
    max_in_flight: int = 4

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_attempts < 1:
            raise ValueError(f"max_attempts must be >= 1, got {self.max_attempts}")
        if self.max_in_flight < 1:
            raise ValueError(f"max_in_flight must be >= 1, got {self.max_in_flight}")


Transport = Callable[[dict], str]


class HttpTransport:
    """POSTs chat-completion payloads with bearer auth from the environment."""

    def __init__(self, config: EndpointConfig):
        self.config = config
        self._session = requests.Session()

    def __call__(self, payload: dict) -> str:
        headers = {}
        token = os.environ.get(self.config.token_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        try:
            response = self._session.post(
                url, json=payload, headers=headers, timeout=self.config.timeout
            )
        except requests.RequestException as exc:
            raise TransportError(f"request failed: {exc}", "transport", retryable=True) from exc
        if response.status_code in (401, 403):
            raise TransportError(f"authentication failed ({response.status_code})", "auth", False)
        if response.status_code == 429:
            raise TransportError("rate limited (429)", "rate_limit", retryable=True)
        if response.status_code >= 500:
            raise TransportError(f"server error ({response.status_code})", "server", True)
        if response.status_code >= 400:
            raise TransportError(f"request rejected ({response.status_code})", "transport", False)
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion response: {exc}", "transport", False) from exc


class StubTransport:
    """Canned transport for tests and offline runs.

    ``replies`` maps the last user-message content to a reply (or is a
    callable over the payload).  Tracks the maximum number of concurrent
    calls and can fail a configured number of initial calls.
    """

    def __init__(
        self,
        replies: Mapping[str, str] | Callable[[dict], str],
        default: str | None = None,
        transient_failures: int = 0,
        delay: float = 0.0,
    ):
        self._replies = replies
        self._default = default
        self._failures_left = transient_failures
        self._delay = delay
        self._lock = threading.Lock()
        self._in_flight = 0
        self.max_in_flight_seen = 0
        self.calls = 0

    def __call__(self, payload: dict) -> str:
        with self._lock:
            self.calls += 1
            self._in_flight += 1
            self.max_in_flight_seen = max(self.max_in_flight_seen, self._in_flight)
            if self._failures_left > 0:
                self._failures_left -= 1
                self._in_flight -= 1
                raise TransportError("stubbed transient failure", "server", retryable=True)
        try:
            if self._delay:
                time.sleep(self._delay)
            if callable(self._replies):
                return self._replies(payload)
            content = payload["messages"][-1]["content"]
            reply = self._replies.get(content, self._default)
            if reply is None:
                raise TransportError("stub has no reply for this message", "transport", False)
            return reply
        finally:
            with self._lock:
                self._in_flight -= 1


class ChatClient:
    """Retrying chat-completion client with a max-in-flight bound."""

    def __init__(self, config: EndpointConfig, transport: Transport | None = None):
        self.config = config
        self._transport = transport if transport is not None else HttpTransport(config)
        self._gate = threading.BoundedSemaphore(config.max_in_flight)

    def complete(self, messages: Sequence[Mapping[str, str]]) -> str:
        payload = {
            "model": self.config.model,
            "messages": [dict(m) for m in messages],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }
        last: TransportError | None = None
        for attempt in range(1, self.config.max_attempts + 1):
            try:
                with self._gate:
                    return self._transport(payload)
            except TransportError as exc:
                last = exc
                if not exc.retryable or attempt == self.config.max_attempts:
                    raise
                delay = self.config.backoff * (2 ** (attempt - 1))
                logger.debug("attempt %d failed (%s); retrying in %.2fs", attempt, exc, delay)
                if delay:
                    time.sleep(delay)
        assert last is not None  # loop always returns or raises
        raise last


def complete(
    config: EndpointConfig,
    messages: Sequence[Mapping[str, str]],
    transport: Transport | None = None,
) -> str:
    """One-shot completion; use ChatClient to share the in-flight bound."""
    return ChatClient(config, transport).complete(messages)


@dataclass(frozen=True)
class ParsedResponse:
    """Payload extracted from raw model text, or an explicit parse failure."""

    value: int | None
    raw: str
    clamped: bool = False

    @property
    def ok(self) -> bool:
        return self.value is not None


_INDEX_RE = re.compile(r"(?<!\d)[12](?!\d)")
_INT_RE = re.compile(r"-?\d+")


def parse_rank(raw: str) -> ParsedResponse:
    """First standalone 1 or 2 in the text, e.g. from "Essay 1" or "答案：2"."""
    match = _INDEX_RE.search(raw)
    if not match:
        return ParsedResponse(None, raw)
    return ParsedResponse(int(match.group()), raw)


def parse_score(raw: str, score_lattice: Sequence[int]) -> ParsedResponse:
    """First integer in the text, clamped to the nearest lattice score."""
    match = _INT_RE.search(raw)
    if not match:
        return ParsedResponse(None, raw)
    value = int(match.group())
    nearest = min(score_lattice, key=lambda s: (abs(s - value), s))
    return ParsedResponse(nearest, raw, clamped=nearest != value)


class LLMComparator:
    """Pairwise ranker backed by a chat endpoint.

    Parse failures return ``None`` so the validation layer can score the
    call as a loss for the target; the running count is kept for reports.
    """

    def __init__(self, client: ChatClient, template: PromptTemplate, prompt: PromptSpec):
        self._client = client
        self._template = template
        self._prompt = prompt
        self._lock = threading.Lock()
        self.parse_failures = 0

    @property
    def identity(self) -> str:
        return f"endpoint({self._client.config.model})"

    def compare(self, first_text: str, second_text: str) -> int | None:
        bindings = {
            "essay_1": first_text,
            "essay_2": second_text,
            "prompt_topic": self._prompt.topic,
            "score_min": self._prompt.score_min,
            "score_max": self._prompt.score_max,
            "features_block": "",
            "essay": "",
            "candidate_scores": "",
        }
        raw = self._client.complete(render(self._template, bindings))
        parsed = parse_rank(raw)
        if not parsed.ok:
            with self._lock:
                self.parse_failures += 1
            return None
        return 1 if parsed.value == 1 else 0


class LLMScorer:
    """Scorer backed by a chat endpoint, with midpoint fallback on parse failure."""

    def __init__(self, client: ChatClient, template: PromptTemplate, prompt: PromptSpec):
        self._client = client
        self._template = template
        self._prompt = prompt
        self._fallback = MidpointScorer()
        self._lock = threading.Lock()
        self.parse_failures = 0
        self.clamp_violations = 0

    @property
    def identity(self) -> str:
        return f"endpoint({self._client.config.model})"

    def score(self, essay_text: str, candidate_set: Sequence[int], prompt: PromptSpec) -> int:
        bindings = {
            "essay": essay_text,
            "candidate_scores": render_candidates(candidate_set),
            "prompt_topic": prompt.topic,
            "score_min": prompt.score_min,
            "score_max": prompt.score_max,
            "features_block": "",
            "essay_1": "",
            "essay_2": "",
        }
        raw = self._client.complete(render(self._template, bindings))
        parsed = parse_score(raw, lattice(prompt))
        if not parsed.ok:
            with self._lock:
                self.parse_failures += 1
            return self._fallback.score(essay_text, candidate_set, prompt)
        if parsed.clamped:
            with self._lock:
                self.clamp_violations += 1
        assert parsed.value is not None
        return parsed.value
