"""OpenAI-shaped message types shared by providers, agents and the gateway."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Literal, Optional

Role = Literal["system", "user", "assistant", "tool"]
FinishReason = Literal["stop", "tool_calls", "length"]

ROLES = ("system", "user", "assistant", "tool")
FINISH_REASONS = ("stop", "tool_calls", "length")


@dataclass(frozen=True)
class ToolCall:
    call_id: str
    name: str
    arguments_text: str

    def __post_init__(self):
        if not self.call_id:
            raise ValueError("ToolCall.call_id must be non-empty")

    def to_wire(self) -> dict:
        return {
            "id": self.call_id,
            "type": "function",
            "function": {"name": self.name, "arguments": self.arguments_text},
        }

    @classmethod
    def from_wire(cls, data: dict) -> "ToolCall":
        fn = data.get("function") or {}
        args = fn.get("arguments")
        if args is None:
            args = ""
        elif not isinstance(args, str):
            # some vendors send the object instead of its serialization
            import json

            args = json.dumps(args)
        return cls(call_id=data["id"], name=fn.get("name", ""), arguments_text=args)


@dataclass(frozen=True)
class ToolResult:
    call_id: str
    status: Literal["ok", "error"]
    content: str

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str = ""
    tool_calls: Optional[tuple[ToolCall, ...]] = None
    tool_call_id: Optional[str] = None
    name: Optional[str] = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role: {self.role!r}")
        if self.role == "tool" and not self.tool_call_id:
            raise ValueError("tool messages require a tool_call_id")
        if self.role != "assistant" and self.tool_calls is not None:
            raise ValueError("only assistant messages may carry tool_calls")
        if self.tool_calls is not None and not isinstance(self.tool_calls, tuple):
            object.__setattr__(self, "tool_calls", tuple(self.tool_calls))

    @classmethod
    def system(cls, content: str) -> "ChatMessage":
        return cls("system", content)

    @classmethod
    def user(cls, content: str) -> "ChatMessage":
        return cls("user", content)

    @classmethod
    def assistant(cls, content: str = "", tool_calls=None) -> "ChatMessage":
        return cls("assistant", content, tool_calls=tuple(tool_calls) if tool_calls else None)

    @classmethod
    def tool(cls, call_id: str, content: str, name: str | None = None) -> "ChatMessage":
        return cls("tool", content, tool_call_id=call_id, name=name)

    def to_wire(self) -> dict:
        out: dict[str, Any] = {"role": self.role, "content": self.content}
        if self.tool_calls:
            out["tool_calls"] = [c.to_wire() for c in self.tool_calls]
            if not self.content:
                out["content"] = None
        if self.tool_call_id:
            out["tool_call_id"] = self.tool_call_id
        if self.name:
            out["name"] = self.name
        return out

    @classmethod
    def from_wire(cls, data: dict) -> "ChatMessage":
        calls = data.get("tool_calls")
        return cls(
            role=data["role"],
            content=data.get("content") or "",
            tool_calls=tuple(ToolCall.from_wire(c) for c in calls) if calls else None,
            tool_call_id=data.get("tool_call_id"),
            name=data.get("name"),
        )


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass(frozen=True)
class ChatResponse:
    message: ChatMessage
    finish_reason: FinishReason = "stop"
    usage: Optional[Usage] = None

    def __post_init__(self):
        if self.message.role != "assistant":
            raise ValueError("ChatResponse.message must be an assistant message")
        if self.finish_reason not in FINISH_REASONS:
            raise ValueError(f"unknown finish_reason: {self.finish_reason!r}")
        has_calls = bool(self.message.tool_calls)
        if (self.finish_reason == "tool_calls") != has_calls:
            raise ValueError("finish_reason 'tool_calls' iff the message carries tool calls")

    @property
    def content(self) -> str:
        return self.message.content

    @classmethod
    def text(cls, content: str) -> "ChatResponse":
        return cls(ChatMessage.assistant(content), "stop")

    @classmethod
    def calls(cls, *calls: ToolCall, content: str = "") -> "ChatResponse":
        return cls(ChatMessage.assistant(content, calls), "tool_calls")


@dataclass(frozen=True)
class ToolCallDelta:
    index: int
    id: Optional[str] = None
    name: Optional[str] = None
    arguments_fragment: Optional[str] = None


@dataclass(frozen=True)
class StreamChunk:
    delta_content: Optional[str] = None
    delta_tool_call: Optional[ToolCallDelta] = None
    finish_reason: Optional[FinishReason] = None

    def __post_init__(self):
        if self.delta_content is not None and self.delta_tool_call is not None:
            raise ValueError("a chunk carries at most one of content / tool-call delta")


@dataclass
class StreamAssembler:
    """Folds stream chunks back into a ChatResponse."""

    content: list[str] = field(default_factory=list)
    calls: dict[int, dict] = field(default_factory=dict)
    finish_reason: Optional[str] = None

    def feed(self, chunk: StreamChunk) -> None:
        if self.finish_reason is not None:
            raise ValueError("chunk received after finish_reason")
        if chunk.delta_content is not None:
            self.content.append(chunk.delta_content)
        if chunk.delta_tool_call is not None:
            d = chunk.delta_tool_call
            slot = self.calls.setdefault(d.index, {"id": None, "name": "", "args": []})
            if d.id:
                slot["id"] = d.id
            if d.name:
                slot["name"] += d.name
            if d.arguments_fragment:
                slot["args"].append(d.arguments_fragment)
        if chunk.finish_reason is not None:
            self.finish_reason = chunk.finish_reason

    def result(self) -> ChatResponse:
        calls = tuple(
            ToolCall(
                call_id=slot["id"] or f"call_{idx}",
                name=slot["name"],
                arguments_text="".join(slot["args"]),
            )
            for idx, slot in sorted(self.calls.items())
        )
        msg = ChatMessage.assistant("".join(self.content), calls or None)
        reason = self.finish_reason or "stop"
        if calls and reason != "tool_calls":
            reason = "tool_calls"
        return ChatResponse(msg, reason)
