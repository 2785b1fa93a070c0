"""liteswarm: a small agent orchestration engine.

Agents with scoped memory, tool calling with self-correction, eight-step
planning, intent-routed handoff between agents, tool-spec generation from API
docs, and an OpenAI-compatible streaming gateway.
"""

from .agent import Agent, AgentConfig, RunOptions, RunResult, compose_context, new_agent
from .memory import MemoryScope, MemoryStore, lexical_score
from .provider import OpenAIProvider, ProviderConfig, Rule, ScriptedProvider, make_scripted
from .swarm import LightSwarm
from .tools import Builtin, Http, ParamSpec, ToolRegistry, ToolSpec, builtin_tool
from .tot import ThoughtPlan, ToTConfig, parse_plan, render_plan
from .types import ChatMessage, ChatResponse, StreamChunk, ToolCall, ToolResult

__version__ = "0.1.0"

__all__ = [
    "Agent", "AgentConfig", "Builtin", "ChatMessage", "ChatResponse", "Http",
    "LightSwarm", "MemoryScope", "MemoryStore", "OpenAIProvider", "ParamSpec",
    "ProviderConfig", "Rule", "RunOptions", "RunResult", "ScriptedProvider",
    "StreamChunk", "ThoughtPlan", "ToTConfig", "ToolCall", "ToolRegistry",
    "ToolResult", "ToolSpec", "builtin_tool", "compose_context", "lexical_score", "make_scripted",
    "new_agent", "parse_plan", "render_plan",
]
