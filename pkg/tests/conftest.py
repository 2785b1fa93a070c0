from __future__ import annotations

from pathlib import Path

import pytest

from liteswarm.agent import Agent, AgentConfig
from liteswarm.builtins import HANDLERS, SEARCH_NEWS_SPEC
from liteswarm.provider import ProviderConfig, Rule, ScriptedProvider
from liteswarm.types import ChatResponse, ToolCall

FIXTURES = Path(__file__).parent / "fixtures"

CFG = ProviderConfig(base_url="http://llm.invalid/v1", model_id="gpt-4o-mini", api_key_ref="test-key")
PLANNER_CFG = ProviderConfig(base_url="https://api.deepseek.com/v1", model_id="deepseek-r1", api_key_ref="sk-test")

IDENTITY = "I am LightAgent, a helpful assistant that can use tools for you."


def text(content: str) -> ChatResponse:
    return ChatResponse.text(content)


def call(name: str, args: str, call_id: str = "call_1") -> ChatResponse:
    return ChatResponse.calls(ToolCall(call_id, name, args))


def scripted(*pairs, default="ok", **kwargs) -> ScriptedProvider:
    """scripted(("needle", response), ..., default=...)"""
    rules = [Rule(m, r if not isinstance(r, str) else text(r)) for m, r in pairs]
    rules.append(Rule(None, default if not isinstance(default, str) else text(default)))
    return ScriptedProvider(rules, **kwargs)


def make_agent(provider, name="Agent A", **cfg_kwargs) -> Agent:
    extra = {k: cfg_kwargs.pop(k) for k in ("memory_store", "planner", "handlers", "http_client", "conversations") if k in cfg_kwargs}
    extra.setdefault("handlers", HANDLERS)
    cfg = AgentConfig(name=name, provider=CFG, **cfg_kwargs)
    return Agent(cfg, provider=provider, **extra)


@pytest.fixture
def search_news_spec():
    return SEARCH_NEWS_SPEC


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
