"""Agent registry with LLM intent routing, bounded handoff and capacity gating."""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Optional

from .agent import Agent, RunOptions, RunResult, RunStream
from .errors import DuplicateName
from .provider import Provider

logger = logging.getLogger(__name__)

MAX_HANDOFFS = 3

ROUTER_SYSTEM = (
    "You route user requests inside a team of agents. Read the agent list and the "
    "user query, then reply with exactly one agent name from the list and nothing else."
)


@dataclass(frozen=True)
class RoutingDecision:
    target: str
    rationale: str
    was_fallback: bool = False


@dataclass(frozen=True)
class Hop:
    from_agent: str
    to_agent: str
    rationale: str


@dataclass
class HandoffTrace:
    entry: str
    final_agent: str
    hops: list[Hop] = field(default_factory=list)


class _Slot:
    """Counts in-flight runs; blocks when a capacity is set and reached."""

    def __init__(self, capacity: Optional[int]):
        self.capacity = capacity
        self.in_flight = 0
        self._cond = threading.Condition()

    def at_capacity(self) -> bool:
        with self._cond:
            return self.capacity is not None and self.in_flight >= self.capacity

    def __enter__(self):
        with self._cond:
            while self.capacity is not None and self.in_flight >= self.capacity:
                self._cond.wait()
            self.in_flight += 1
        return self

    def __exit__(self, *exc):
        with self._cond:
            self.in_flight -= 1
            self._cond.notify()


class LightSwarm:
    def __init__(self, router_provider: Provider | None = None, max_handoffs: int = MAX_HANDOFFS):
        self.agents: dict[str, Agent] = {}
        self._slots: dict[str, _Slot] = {}
        self.router_provider = router_provider
        self.max_handoffs = max_handoffs

    def register_agent(self, *agents: Agent, capacity: Optional[int] = None) -> None:
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be a positive integer")
        for agent in agents:
            if agent.name in self.agents:
                raise DuplicateName(f"agent already registered: {agent.name}")
        for agent in agents:
            self.agents[agent.name] = agent
            self._slots[agent.name] = _Slot(capacity)

    def capacity(self, name: str) -> Optional[int]:
        return self._slots[name].capacity

    def in_flight(self, name: str) -> int:
        return self._slots[name].in_flight

    def __len__(self) -> int:
        return len(self.agents)

    def _require(self, name: str) -> Agent:
        try:
            return self.agents[name]
        except KeyError:
            raise KeyError(f"unknown agent: {name}") from None

    def router_prompt(self, query: str, current: str) -> list:
        from .types import ChatMessage

        lines = [f"- {a.name} — {a.config.instructions} — {a.config.role}" for a in self.agents.values()]
        user = (
            "Agents:\n" + "\n".join(lines)
            + f"\n\nCurrent agent: {current}\n\nUser query:\n{query}\n\n"
            "Reply with the name of the single best agent for this query."
        )
        return [ChatMessage.system(ROUTER_SYSTEM), ChatMessage.user(user)]

    def route(self, query: str, entry: str, current: str | None = None) -> RoutingDecision:
        """Pick the agent that should answer ``query``; never raises on router trouble.

        ``entry`` supplies the default router model; ``current`` is the agent
        holding the query now and the fallback target.
        """
        self._require(entry)
        current = current or entry
        self._require(current)
        if len(self.agents) == 1:
            return RoutingDecision(current, "only one agent registered")
        router = self.router_provider or self.agents[entry].provider
        try:
            reply = router.complete(self.router_prompt(query, current)).content.strip()
        except Exception as exc:  # noqa: BLE001 - routing falls back, never fails
            logger.warning("router failed, staying with %s: %s", current, exc)
            return RoutingDecision(current, f"router failed: {exc}", was_fallback=True)
        if reply in self.agents:
            if reply != current and self._slots[reply].at_capacity():
                return RoutingDecision(current, f"{reply} is at capacity", was_fallback=True)
            return RoutingDecision(reply, f"router chose {reply}")
        return RoutingDecision(current, f"router reply {reply[:80]!r} names no registered agent", was_fallback=True)

    def _handoff(self, entry: str, query: str) -> tuple[str, HandoffTrace]:
        self._require(entry)
        trace = HandoffTrace(entry=entry, final_agent=entry)
        current = entry
        for _ in range(self.max_handoffs):
            decision = self.route(query, entry, current)
            if decision.target == current:
                break
            trace.hops.append(Hop(current, decision.target, decision.rationale))
            current = decision.target
        trace.final_agent = current
        return current, trace

    def _note(self, trace: HandoffTrace) -> Optional[str]:
        if not trace.hops:
            return None
        return f"Handed off from {trace.entry}: user query follows."

    def run(self, entry: str, query: str, options: RunOptions = RunOptions()) -> tuple[RunResult, HandoffTrace]:
        target, trace = self._handoff(entry, query)
        with self._slots[target]:
            result = self.agents[target].run(query, options, handoff_note=self._note(trace))
        return result, trace

    def run_stream(self, entry: str, query: str, options: RunOptions = RunOptions()) -> tuple[RunStream, HandoffTrace]:
        target, trace = self._handoff(entry, query)
        agent = self.agents[target]
        note = self._note(trace)
        slot = self._slots[target]

        def gen():
            with slot:
                inner = agent.run_stream(query, options, handoff_note=note)
                result = yield from iter(inner)
            return result

        return RunStream(gen()), trace
