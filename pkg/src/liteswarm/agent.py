"""The agent run loop.

One run: recall memories, optionally plan, then alternate provider calls and
tool executions until the model stops (or the iteration budget runs out),
and finally write the exchange back to memory.
"""

from __future__ import annotations

import logging
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Optional, Sequence

import httpx

from . import tot
from .errors import InvalidConfig, IterationLimit
from .memory import MemoryScope, MemoryStore, ScoredMemory, rank_key
from .provider import OpenAIProvider, Provider, ProviderConfig
from .tools import ToolRegistry, ToolSpec
from .types import ChatMessage, StreamAssembler, ToolCall, ToolResult

logger = logging.getLogger(__name__)

MEMORY_CAP = 5
HISTORY_CAP = 20
WRITEBACK_ANSWER_CHARS = 1000
MAX_TOOL_FAILURES = 2
DIRECTIVE_MARKERS = ("please remember", "remember:", "请记住")
APOLOGY = "Sorry, I could not finish this request within the allowed number of steps."


@dataclass(frozen=True)
class AgentConfig:
    name: str
    provider: ProviderConfig
    instructions: str = ""
    role: str = ""
    tot: tot.ToTConfig = field(default_factory=tot.ToTConfig)
    memory_enabled: bool = False
    self_learning: bool = False
    max_iterations: int = 10
    tools: tuple[ToolSpec, ...] = ()

    def __post_init__(self):
        if not isinstance(self.tools, tuple):
            object.__setattr__(self, "tools", tuple(self.tools))

    def validate(self) -> None:
        if not self.name or not self.name.strip():
            raise InvalidConfig("agent name must be non-empty")
        if self.max_iterations < 1:
            raise InvalidConfig(f"agent {self.name}: max_iterations must be >= 1")
        if self.tot.enabled and self.tot.provider is None:
            raise InvalidConfig(f"agent {self.name}: tree_of_thought enabled without a planning provider")
        if self.self_learning and not self.memory_enabled:
            raise InvalidConfig(f"agent {self.name}: self_learning requires memory_enabled")


@dataclass(frozen=True)
class RunOptions:
    user_id: str = "default"
    stream: bool = False
    temperature: Optional[float] = None

    def __post_init__(self):
        if not self.user_id:
            raise ValueError("user_id must be non-empty")


@dataclass
class RunResult:
    final_text: str
    iterations_used: int = 0
    tool_invocations: list[tuple[ToolCall, ToolResult]] = field(default_factory=list)
    plan: Optional[tot.ThoughtPlan] = None
    memories_injected: list[str] = field(default_factory=list)
    trace: list[dict] = field(default_factory=list)
    agent_name: str = ""

    @property
    def hit_iteration_limit(self) -> bool:
        return any(e.get("type") == "error" and e.get("error") == "IterationLimit" for e in self.trace)


@dataclass(frozen=True)
class ToolErrorAction:
    mask: bool
    note: Optional[str] = None


def handle_tool_error(call: ToolCall, result: ToolResult, attempt: int) -> ToolErrorAction:
    """Decide what to do after the ``attempt``-th failure of ``call.name`` in a run.

    The error content always goes back to the model as the tool message. Past
    the second failure the tool is withdrawn and the model is told so.
    """
    if attempt <= MAX_TOOL_FAILURES:
        return ToolErrorAction(mask=False)
    return ToolErrorAction(mask=True, note=f"Tool {call.name} is unavailable; answer without it.")


def is_directive(text: str) -> bool:
    lowered = text.lower()
    return any(marker in lowered for marker in DIRECTIVE_MARKERS)


def compose_context(
    role: str,
    query: str,
    memories: Sequence[ScoredMemory] = (),
    plan: Optional[tot.ThoughtPlan] = None,
    history: Sequence[ChatMessage] = (),
    notes: Sequence[str] = (),
) -> list[ChatMessage]:
    messages = [ChatMessage.system(role)]
    messages.extend(ChatMessage.system(n) for n in notes)
    if memories:
        block = "RELEVANT MEMORIES:\n" + "\n".join(f"- {m.record.text}" for m in memories)
        messages.append(ChatMessage.system(block))
    if plan is not None:
        rendered = tot.render_plan(plan)
        if rendered:
            messages.append(ChatMessage.system(rendered))
    messages.extend(history)
    messages.append(ChatMessage.user(query))
    return messages


class ConversationBook:
    """Per-(agent, user) chat history; runs on one conversation are serialized."""

    def __init__(self, cap: int = HISTORY_CAP):
        self.cap = cap
        self._history: dict[tuple[str, str], list[ChatMessage]] = defaultdict(list)
        self._locks: dict[tuple[str, str], threading.Lock] = {}
        self._guard = threading.Lock()

    def lock(self, agent: str, user_id: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault((agent, user_id), threading.Lock())

    def history(self, agent: str, user_id: str) -> list[ChatMessage]:
        with self._guard:
            return list(self._history[(agent, user_id)])

    def append(self, agent: str, user_id: str, *messages: ChatMessage) -> None:
        with self._guard:
            hist = self._history[(agent, user_id)]
            hist.extend(messages)
            del hist[: max(0, len(hist) - self.cap)]


class RunStream:
    """Iterator of text deltas; ``result`` is filled once it is exhausted."""

    def __init__(self, gen: Iterator[str]):
        self._gen = gen
        self.result: Optional[RunResult] = None

    def __iter__(self):
        self.result = yield from self._gen
        return self.result

    def text(self) -> str:
        return "".join(self)


class Agent:
    def __init__(
        self,
        config: AgentConfig,
        memory_store: MemoryStore | None = None,
        provider: Provider | None = None,
        planner: Provider | None = None,
        handlers: dict[str, Callable[..., Any]] | None = None,
        http_client: httpx.Client | None = None,
        conversations: ConversationBook | None = None,
    ):
        config.validate()
        self.config = config
        self.provider = provider or OpenAIProvider(config.provider)
        self.planner: Provider | None = None
        if config.tot.enabled:
            self.planner = planner or OpenAIProvider(config.tot.provider)
        self.memory = memory_store
        if config.memory_enabled and self.memory is None:
            self.memory = MemoryStore()
        self.tools = ToolRegistry(handlers, http_client=http_client)
        for spec in config.tools:
            self.tools.register(spec)
        self.conversations = conversations or ConversationBook()

    @property
    def name(self) -> str:
        return self.config.name

    def __repr__(self):
        return f"Agent({self.name!r})"

    def run(self, query: str, options: RunOptions = RunOptions(), handoff_note: str | None = None) -> RunResult:
        gen = self._drive(query, options, handoff_note, stream=False)
        while True:
            try:
                next(gen)
            except StopIteration as stop:
                return stop.value

    def run_stream(self, query: str, options: RunOptions = RunOptions(), handoff_note: str | None = None) -> RunStream:
        return RunStream(self._drive(query, options, handoff_note, stream=True))

    # -- internals ---------------------------------------------------------

    def _recall(self, query: str, user_id: str) -> list[ScoredMemory]:
        if not self.config.memory_enabled or self.memory is None:
            return []
        found = self.memory.retrieve(query, MemoryScope.user(user_id), MEMORY_CAP)
        if self.config.self_learning:
            found += self.memory.retrieve(query, MemoryScope.shared(self.name), MEMORY_CAP)
        found.sort(key=rank_key)
        return found[:MEMORY_CAP]

    def _call_provider(self, messages, schemas, temperature, stream: bool):
        """One provider turn; returns (response, content fragments)."""
        if not stream:
            resp = self.provider.complete(messages, schemas, temperature)
            return resp, [resp.content] if resp.content else []
        assembler = StreamAssembler()
        fragments = []
        for chunk in self.provider.complete_stream(messages, schemas, temperature):
            assembler.feed(chunk)
            if chunk.delta_content:
                fragments.append(chunk.delta_content)
        if assembler.finish_reason is None:
            from .errors import StreamInterrupted

            raise StreamInterrupted("provider stream ended without a finish_reason")
        return assembler.result(), fragments

    def _drive(self, query: str, options: RunOptions, handoff_note: str | None, stream: bool):
        if not query or not query.strip():
            raise ValueError("query must be non-empty")
        user_id = options.user_id
        with self.conversations.lock(self.name, user_id):
            history = self.conversations.history(self.name, user_id)
            result = RunResult(final_text="", agent_name=self.name)
            trace = result.trace

            memories = self._recall(query, user_id)
            result.memories_injected = [m.record.record_id for m in memories]
            if memories:
                trace.append({
                    "type": "memory",
                    "records": [{"record_id": m.record.record_id, "score": m.score, "text": m.record.text} for m in memories],
                })

            if self.config.tot.enabled and self.planner is not None:
                result.plan = tot.plan(self.planner, query, tot.summarize_context(history))
                trace.append({"type": "plan", "empty": result.plan.is_empty})

            notes = [handoff_note] if handoff_note else []
            messages = compose_context(self.config.role, query, memories, result.plan, history, notes)

            failures: dict[str, int] = defaultdict(int)
            masked: set[str] = set()
            last_content = ""
            final: Optional[str] = None

            while final is None:
                if result.iterations_used >= self.config.max_iterations:
                    final = last_content or APOLOGY
                    trace.append({
                        "type": "error",
                        "error": IterationLimit.__name__,
                        "message": f"no final answer after {self.config.max_iterations} provider calls",
                    })
                    if stream:
                        yield final
                    break

                schemas = self.tools.wire_schemas(exclude=masked)
                resp, fragments = self._call_provider(messages, schemas, options.temperature, stream)
                result.iterations_used += 1
                trace.append({
                    "type": "provider_call",
                    "iteration": result.iterations_used,
                    "tools": [s["name"] for s in schemas],
                    "finish_reason": resp.finish_reason,
                })
                if resp.content:
                    last_content = resp.content

                if resp.finish_reason != "tool_calls":
                    final = resp.content
                    if stream:
                        yield from fragments
                    break

                messages.append(resp.message)
                pending_notes = []
                for call in resp.message.tool_calls:
                    trace.append({"type": "tool_call", "call_id": call.call_id, "name": call.name, "arguments": call.arguments_text})
                    if call.name in masked:
                        tr = ToolResult(call.call_id, "error", f"Tool {call.name} is unavailable; answer without it.")
                    else:
                        tr = self.tools.execute(call)
                    result.tool_invocations.append((call, tr))
                    trace.append({"type": "tool_result", "call_id": call.call_id, "name": call.name, "status": tr.status, "content": tr.content})
                    messages.append(ChatMessage.tool(call.call_id, tr.content, name=call.name))
                    if tr.status == "error" and call.name not in masked:
                        failures[call.name] += 1
                        action = handle_tool_error(call, tr, failures[call.name])
                        if action.mask:
                            masked.add(call.name)
                            pending_notes.append(action.note)
                            trace.append({"type": "tool_masked", "name": call.name})
                # notes go after every tool reply so the call/reply pairing stays intact
                messages.extend(ChatMessage.system(n) for n in pending_notes)

            result.final_text = final
            self.conversations.append(self.name, user_id, ChatMessage.user(query), ChatMessage.assistant(final))
            if not result.hit_iteration_limit:
                self._write_back(query, final, user_id, trace)
            trace.append({"type": "final", "text": final})
            return result

    def _write_back(self, query: str, answer: str, user_id: str, trace: list) -> None:
        if not self.config.memory_enabled or self.memory is None:
            return
        text = f"User: {query} / Assistant: {answer[:WRITEBACK_ANSWER_CHARS]}"
        rid = self.memory.store(text, MemoryScope.user(user_id))
        trace.append({"type": "memory_store", "scope": "user", "record_id": rid})
        if self.config.self_learning and is_directive(query):
            rid = self.memory.store(query, MemoryScope.shared(self.name))
            trace.append({"type": "memory_store", "scope": "agent_shared", "record_id": rid})


def new_agent(config: AgentConfig, memory_store: MemoryStore | None = None, provider: Provider | None = None, **kwargs) -> Agent:
    return Agent(config, memory_store=memory_store, provider=provider, **kwargs)
