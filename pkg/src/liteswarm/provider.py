"""Chat-completion providers.

Two implementations share one surface (``complete`` / ``complete_stream``):

* :class:`OpenAIProvider` talks to any OpenAI-compatible ``/chat/completions``
  endpoint over HTTP.
* :class:`ScriptedProvider` answers from an ordered rule table and is what the
  test-suite and ``--provider-script`` use to run everything offline.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Optional, Protocol, Sequence, Union
from urllib.parse import urlparse

import httpx

from .errors import (
    AuthError,
    NoDefaultRule,
    ProtocolError,
    StreamInterrupted,
    TransportError,
)
from .types import (
    ChatMessage,
    ChatResponse,
    StreamChunk,
    ToolCall,
    ToolCallDelta,
    Usage,
)

logger = logging.getLogger(__name__)

BACKOFF_BASE = 0.5
BACKOFF_FACTOR = 2.0

_ENV_REF = re.compile(r"^\$\{([A-Za-z_][A-Za-z0-9_]*)\}$")


def resolve_secret(ref: str) -> str:
    """Return ``ref`` itself, or the env var it names when written ``${VAR}``."""
    m = _ENV_REF.match(ref or "")
    if not m:
        return ref
    name = m.group(1)
    if name not in os.environ:
        raise KeyError(f"environment variable {name} referenced by api_key_ref is not set")
    return os.environ[name]


@dataclass(frozen=True)
class ProviderConfig:
    base_url: str
    model_id: str
    api_key_ref: str = ""
    request_timeout: float = 60.0
    max_retries: int = 2
    default_temperature: float = 0.7

    def __post_init__(self):
        parsed = urlparse(self.base_url or "")
        if not parsed.scheme or not parsed.netloc:
            raise ValueError(f"base_url must be an absolute URL, got {self.base_url!r}")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.request_timeout <= 0:
            raise ValueError("request_timeout must be > 0")
        if not 0 <= self.default_temperature <= 2:
            raise ValueError("default_temperature must lie in [0, 2]")

    @classmethod
    def from_dict(cls, data: dict) -> "ProviderConfig":
        allowed = {
            "base_url", "model_id", "api_key_ref", "request_timeout",
            "max_retries", "default_temperature",
        }
        unknown = set(data) - allowed
        if unknown:
            raise ValueError(f"unknown provider fields: {sorted(unknown)}")
        return cls(**data)


class Provider(Protocol):
    def complete(
        self,
        messages: Sequence[ChatMessage],
        tools: Sequence[dict] = (),
        temperature: Optional[float] = None,
    ) -> ChatResponse: ...

    def complete_stream(
        self,
        messages: Sequence[ChatMessage],
        tools: Sequence[dict] = (),
        temperature: Optional[float] = None,
    ) -> Iterator[StreamChunk]: ...


def check_messages(messages: Sequence[ChatMessage]) -> None:
    if not messages:
        raise ValueError("messages must be non-empty")
    if messages[0].role not in ("system", "user"):
        raise ValueError("first message must have role system or user")


def backoff_delays(max_retries: int) -> list[float]:
    return [BACKOFF_BASE * BACKOFF_FACTOR**i for i in range(max_retries)]


# --------------------------------------------------------------------------
# HTTP provider


class OpenAIProvider:
    """Client for an OpenAI-compatible chat-completions endpoint."""

    def __init__(
        self,
        config: ProviderConfig,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self._api_key = resolve_secret(config.api_key_ref)
        self._client = client or httpx.Client(timeout=config.request_timeout)
        self._sleep = sleep

    @property
    def url(self) -> str:
        return self.config.base_url.rstrip("/") + "/chat/completions"

    def _body(self, messages, tools, temperature, stream: bool) -> dict:
        body: dict[str, Any] = {
            "model": self.config.model_id,
            "messages": [m.to_wire() for m in messages],
            "temperature": self.config.default_temperature if temperature is None else temperature,
        }
        if tools:
            body["tools"] = [{"type": "function", "function": t} for t in tools]
        if stream:
            body["stream"] = True
        return body

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        return headers

    def _with_retries(self, attempt_fn):
        delays = backoff_delays(self.config.max_retries)
        last: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            try:
                return attempt_fn()
            except _Retryable as exc:
                last = exc
                if attempt < self.config.max_retries:
                    logger.warning("upstream attempt %d failed (%s); retrying", attempt + 1, exc)
                    self._sleep(delays[attempt])
        raise TransportError(f"upstream failed after {self.config.max_retries + 1} attempts: {last}")

    def _check_status(self, resp: httpx.Response) -> None:
        code = resp.status_code
        if code in (401, 403):
            raise AuthError(f"upstream rejected credentials (HTTP {code})")
        if code == 429 or code >= 500:
            raise _Retryable(f"HTTP {code}")
        if code >= 400:
            raise ProtocolError(f"upstream returned HTTP {code}: {resp.text[:200]}")

    def complete(self, messages, tools=(), temperature=None) -> ChatResponse:
        check_messages(messages)
        body = self._body(messages, tools, temperature, stream=False)

        def attempt():
            try:
                resp = self._client.post(self.url, json=body, headers=self._headers())
            except httpx.TransportError as exc:
                raise _Retryable(str(exc)) from exc
            self._check_status(resp)
            return resp

        resp = self._with_retries(attempt)
        try:
            return parse_completion(resp.json())
        except (ValueError, KeyError, TypeError, IndexError) as exc:
            raise ProtocolError(f"response is not a chat completion: {exc}") from exc

    def complete_stream(self, messages, tools=(), temperature=None) -> Iterator[StreamChunk]:
        check_messages(messages)
        body = self._body(messages, tools, temperature, stream=True)

        def attempt():
            try:
                req = self._client.build_request("POST", self.url, json=body, headers=self._headers())
                resp = self._client.send(req, stream=True)
            except httpx.TransportError as exc:
                raise _Retryable(str(exc)) from exc
            if resp.status_code >= 400:
                resp.read()
                resp.close()
            self._check_status(resp)
            return resp

        resp = self._with_retries(attempt)
        try:
            yield from parse_sse_lines(resp.iter_lines())
        finally:
            resp.close()


class _Retryable(Exception):
    pass


def parse_completion(data: dict) -> ChatResponse:
    choice = data["choices"][0]
    msg = choice["message"]
    calls = msg.get("tool_calls") or None
    message = ChatMessage.assistant(
        msg.get("content") or "",
        [ToolCall.from_wire(c) for c in calls] if calls else None,
    )
    reason = choice.get("finish_reason") or "stop"
    if calls:
        reason = "tool_calls"
    elif reason not in ("stop", "length"):
        reason = "stop"
    usage = None
    if isinstance(data.get("usage"), dict):
        u = data["usage"]
        usage = Usage(int(u.get("prompt_tokens", 0)), int(u.get("completion_tokens", 0)))
    return ChatResponse(message, reason, usage)


def parse_sse_lines(lines) -> Iterator[StreamChunk]:
    """Turn ``data: {...}`` lines of an OpenAI stream into StreamChunks."""
    finished = False
    for raw in lines:
        line = raw.strip()
        if not line or line.startswith(":") or not line.startswith("data:"):
            continue
        payload = line[len("data:"):].strip()
        if payload == "[DONE]":
            break
        try:
            event = json.loads(payload)
            choices = event.get("choices") or []
        except (ValueError, AttributeError) as exc:
            raise ProtocolError(f"unparseable stream event: {payload[:200]}") from exc
        if not choices:
            continue
        choice = choices[0]
        delta = choice.get("delta") or {}
        if delta.get("content"):
            yield StreamChunk(delta_content=delta["content"])
        for tc in delta.get("tool_calls") or []:
            fn = tc.get("function") or {}
            yield StreamChunk(
                delta_tool_call=ToolCallDelta(
                    index=tc.get("index", 0),
                    id=tc.get("id"),
                    name=fn.get("name"),
                    arguments_fragment=fn.get("arguments"),
                )
            )
        reason = choice.get("finish_reason")
        if reason:
            if reason not in ("stop", "tool_calls", "length"):
                reason = "stop"
            finished = True
            yield StreamChunk(finish_reason=reason)
            break
    if not finished:
        raise StreamInterrupted("stream ended without a finish_reason")


# --------------------------------------------------------------------------
# scripted provider

Matcher = Union[str, Callable[[str], bool], None]


@dataclass(frozen=True)
class Rule:
    """One scripted reply.

    ``matcher`` is a substring, a predicate over the request's last
    user/tool message text, or ``None`` for the always-matching default.
    ``response`` may be an exception instance, which is raised instead.
    """

    matcher: Matcher
    response: Union[ChatResponse, BaseException]
    delay: float = 0.0

    @property
    def is_default(self) -> bool:
        return self.matcher is None or self.matcher == ""

    def matches(self, text: str) -> bool:
        if self.is_default:
            return True
        if callable(self.matcher):
            return bool(self.matcher(text))
        return self.matcher in text


@dataclass(frozen=True)
class LoggedRequest:
    messages: tuple[ChatMessage, ...]
    tools: tuple[dict, ...]
    temperature: Optional[float]
    stream: bool

    @property
    def tool_names(self) -> list[str]:
        return [t["name"] for t in self.tools]


def last_user_or_tool_text(messages: Sequence[ChatMessage]) -> str:
    for msg in reversed(messages):
        if msg.role in ("user", "tool"):
            return msg.content
    return ""


class ScriptedProvider:
    """Deterministic provider driven by an ordered rule table; first match wins."""

    def __init__(self, rules: Sequence[Rule], chunk_size: int = 4, config: ProviderConfig | None = None):
        rules = list(rules)
        if not rules or not rules[-1].is_default:
            raise NoDefaultRule("the last scripted rule must be an always-matching default")
        if chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        self.rules = tuple(rules)
        self.chunk_size = chunk_size
        self.config = config
        self.call_log: list[LoggedRequest] = []
        self._lock = threading.Lock()

    def _select(self, messages, tools, temperature, stream) -> ChatResponse:
        check_messages(messages)
        with self._lock:
            self.call_log.append(LoggedRequest(tuple(messages), tuple(tools), temperature, stream))
        text = last_user_or_tool_text(messages)
        rule = next(r for r in self.rules if r.matches(text))
        if rule.delay:
            time.sleep(rule.delay)
        if isinstance(rule.response, BaseException):
            raise rule.response
        return rule.response

    def complete(self, messages, tools=(), temperature=None) -> ChatResponse:
        return self._select(messages, tools, temperature, stream=False)

    def complete_stream(self, messages, tools=(), temperature=None) -> Iterator[StreamChunk]:
        response = self._select(messages, tools, temperature, stream=True)
        return iter(chunk_response(response, self.chunk_size))


def chunk_text(text: str, size: int) -> list[str]:
    return [text[i:i + size] for i in range(0, len(text), size)]


def chunk_response(response: ChatResponse, size: int) -> list[StreamChunk]:
    chunks = [StreamChunk(delta_content=piece) for piece in chunk_text(response.content, size)]
    for idx, call in enumerate(response.message.tool_calls or ()):
        chunks.append(StreamChunk(delta_tool_call=ToolCallDelta(idx, id=call.call_id, name=call.name)))
        for piece in chunk_text(call.arguments_text, size):
            chunks.append(StreamChunk(delta_tool_call=ToolCallDelta(idx, arguments_fragment=piece)))
    chunks.append(StreamChunk(finish_reason=response.finish_reason))
    return chunks


def make_scripted(rules: Sequence[Rule], **kwargs) -> ScriptedProvider:
    return ScriptedProvider(rules, **kwargs)


def response_from_fixture(data: Any) -> ChatResponse:
    """Build a ChatResponse from the fixture shorthand.

    A bare string is a plain text answer; a dict may carry ``content`` and
    ``tool_calls`` as ``[{"id", "name", "arguments"}]`` where ``arguments``
    is either a string or an object to serialize.
    """
    if isinstance(data, str):
        return ChatResponse.text(data)
    if not isinstance(data, dict):
        raise ValueError(f"unsupported scripted response: {data!r}")
    calls = []
    for i, c in enumerate(data.get("tool_calls") or []):
        args = c.get("arguments", {})
        if not isinstance(args, str):
            args = json.dumps(args, ensure_ascii=False)
        calls.append(ToolCall(c.get("id") or f"call_{i}", c["name"], args))
    if calls:
        return ChatResponse.calls(*calls, content=data.get("content", ""))
    return ChatResponse.text(data.get("content", ""))


def load_script_fixture(path: str | os.PathLike) -> dict[str, ScriptedProvider]:
    """Read a ``{provider_name: [{"match_substring", "response"}, ...]}`` file.

    A rule may also carry ``"delay"`` (seconds) to simulate a slow model.
    """
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("provider script must map provider names to rule lists")
    providers = {}
    for name, rules in data.items():
        built = [
            Rule(r.get("match_substring") or None, response_from_fixture(r["response"]), float(r.get("delay", 0)))
            for r in rules
        ]
        providers[name] = ScriptedProvider(built)
    return providers
