"""Engine config loading and the runtime that wires agents, swarms and memory.

Loading is split in two: :func:`load_config` parses and fully validates the
JSON file without side effects, :func:`build_engine` then constructs
providers, opens the memory journal and instantiates agents.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

from . import builtins
from .agent import Agent, AgentConfig, ConversationBook, RunOptions, RunResult, RunStream
from .errors import ConfigError, InvalidSpec, SpecParseError
from .memory import MemoryScope, MemoryStore
from .provider import OpenAIProvider, Provider, ProviderConfig, ScriptedProvider, resolve_secret
from .swarm import HandoffTrace, LightSwarm
from .tools import ToolSpec
from .toolgen import validate_spec_file
from .tot import ToTConfig

SWARM_PREFIX = "swarm:"
DEFAULT_BIND = "127.0.0.1:8000"
DEFAULT_BODY_LIMIT = 1024 * 1024


@dataclass(frozen=True)
class SwarmMember:
    agent: str
    capacity: Optional[int] = None


@dataclass(frozen=True)
class SwarmConfig:
    entry: str
    members: tuple[SwarmMember, ...]
    router_provider: Optional[str] = None


@dataclass(frozen=True)
class GatewayConfig:
    served: dict
    bind_address: str = DEFAULT_BIND
    request_body_limit: int = DEFAULT_BODY_LIMIT
    bearer_token: Optional[str] = None

    @property
    def host_port(self) -> tuple[str, int]:
        host, _, port = self.bind_address.rpartition(":")
        return host or "127.0.0.1", int(port)


@dataclass
class EngineConfig:
    providers: dict[str, ProviderConfig]
    agents: list[AgentConfig]
    agent_providers: dict[str, str]
    planner_providers: dict[str, str]
    swarms: list[SwarmConfig] = field(default_factory=list)
    gateway: Optional[GatewayConfig] = None
    memory_journal: Optional[str] = None


def _expect(cond: bool, message: str, where: str) -> None:
    if not cond:
        raise ConfigError(message, where)


def _provider_config(data: Any, where: str) -> ProviderConfig:
    _expect(isinstance(data, dict), "must be an object", where)
    try:
        cfg = ProviderConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), where) from None
    try:
        resolve_secret(cfg.api_key_ref)
    except KeyError as exc:
        raise ConfigError(exc.args[0], f"{where}.api_key_ref") from None
    return cfg


def _load_tool(item: Any, base: Path, where: str) -> ToolSpec:
    try:
        if isinstance(item, str):
            path = (base / item) if not os.path.isabs(item) else Path(item)
            if not path.exists():
                raise ConfigError(f"tool file not found: {item}", where)
            return validate_spec_file(path)
        return ToolSpec.from_json(item)
    except (InvalidSpec, SpecParseError) as exc:
        raise ConfigError(str(exc), where) from None


AGENT_FIELDS = {
    "name", "instructions", "role", "provider", "tot", "memory_enabled",
    "self_learning", "max_iterations", "tools",
}


def parse_config(data: Any, base_dir: str | os.PathLike = ".") -> EngineConfig:
    base = Path(base_dir)
    _expect(isinstance(data, dict), "config must be a JSON object", "$")
    unknown = set(data) - {"providers", "agents", "swarms", "gateway", "memory"}
    _expect(not unknown, f"unknown top-level fields {sorted(unknown)}", "$")

    raw_providers = data.get("providers") or {}
    _expect(isinstance(raw_providers, dict) and raw_providers, "at least one provider is required", "providers")
    providers = {name: _provider_config(p, f"providers.{name}") for name, p in raw_providers.items()}

    raw_agents = data.get("agents") or []
    _expect(isinstance(raw_agents, list) and raw_agents, "at least one agent is required", "agents")
    agents, agent_providers, planner_providers = [], {}, {}
    for i, a in enumerate(raw_agents):
        where = f"agents[{i}]"
        _expect(isinstance(a, dict), "must be an object", where)
        extra = set(a) - AGENT_FIELDS
        _expect(not extra, f"unknown fields {sorted(extra)}", where)
        name = a.get("name")
        _expect(isinstance(name, str) and name.strip() != "", "name is required", f"{where}.name")
        _expect(name not in agent_providers, f"duplicate agent name {name!r}", f"{where}.name")
        pname = a.get("provider")
        _expect(pname in providers, f"unknown provider {pname!r}", f"{where}.provider")
        tot_raw = a.get("tot") or {}
        _expect(isinstance(tot_raw, dict), "must be an object", f"{where}.tot")
        tot_cfg = ToTConfig()
        if tot_raw.get("enabled"):
            tp = tot_raw.get("provider")
            _expect(tp in providers, f"unknown planning provider {tp!r}", f"{where}.tot.provider")
            tot_cfg = ToTConfig(True, providers[tp])
            planner_providers[name] = tp
        tools_raw = a.get("tools") or []
        _expect(isinstance(tools_raw, list), "must be a list", f"{where}.tools")
        tools = tuple(_load_tool(t, base, f"{where}.tools[{j}]") for j, t in enumerate(tools_raw))
        names = [t.name for t in tools]
        _expect(len(names) == len(set(names)), "duplicate tool names", f"{where}.tools")
        max_it = a.get("max_iterations", 10)
        _expect(isinstance(max_it, int) and not isinstance(max_it, bool) and max_it >= 1,
                "must be a positive integer", f"{where}.max_iterations")
        cfg = AgentConfig(
            name=name,
            provider=providers[pname],
            instructions=a.get("instructions", ""),
            role=a.get("role", ""),
            tot=tot_cfg,
            memory_enabled=bool(a.get("memory_enabled", False)),
            self_learning=bool(a.get("self_learning", False)),
            max_iterations=max_it,
            tools=tools,
        )
        try:
            cfg.validate()
        except ValueError as exc:
            raise ConfigError(str(exc), where) from None
        agents.append(cfg)
        agent_providers[name] = pname

    swarms = []
    for i, s in enumerate(data.get("swarms") or []):
        where = f"swarms[{i}]"
        _expect(isinstance(s, dict), "must be an object", where)
        entry = s.get("entry")
        _expect(entry in agent_providers, f"unknown agent: {entry}", f"{where}.entry")
        members = []
        for j, m in enumerate(s.get("members") or []):
            m = {"agent": m} if isinstance(m, str) else m
            _expect(isinstance(m, dict) and m.get("agent") in agent_providers,
                    f"unknown agent: {m.get('agent') if isinstance(m, dict) else m}", f"{where}.members[{j}]")
            cap = m.get("capacity")
            _expect(cap is None or (isinstance(cap, int) and cap >= 1), "capacity must be a positive integer",
                    f"{where}.members[{j}].capacity")
            members.append(SwarmMember(m["agent"], cap))
        if entry not in {m.agent for m in members}:
            members.insert(0, SwarmMember(entry))
        member_names = [m.agent for m in members]
        _expect(len(member_names) == len(set(member_names)), "duplicate members", f"{where}.members")
        router = s.get("router_provider")
        _expect(router is None or router in providers, f"unknown provider {router!r}", f"{where}.router_provider")
        _expect(entry not in {sw.entry for sw in swarms}, f"duplicate swarm entry {entry!r}", f"{where}.entry")
        swarms.append(SwarmConfig(entry, tuple(members), router))

    gateway = None
    if data.get("gateway") is not None:
        g = data["gateway"]
        _expect(isinstance(g, dict), "must be an object", "gateway")
        served = g.get("served") or {}
        _expect(isinstance(served, dict) and served, "at least one served model is required", "gateway.served")
        swarm_entries = {sw.entry for sw in swarms}
        for model, target in served.items():
            if isinstance(target, str) and target.startswith(SWARM_PREFIX):
                _expect(target[len(SWARM_PREFIX):] in swarm_entries, f"unknown swarm: {target}", f"gateway.served.{model}")
            else:
                _expect(target in agent_providers, f"unknown agent: {target}", f"gateway.served.{model}")
        bind = g.get("bind_address", DEFAULT_BIND)
        _expect(isinstance(bind, str) and bind.rpartition(":")[2].isdigit(), "must be host:port", "gateway.bind_address")
        limit = g.get("request_body_limit", DEFAULT_BODY_LIMIT)
        _expect(isinstance(limit, int) and limit > 0, "must be a positive integer", "gateway.request_body_limit")
        token = g.get("bearer_token")
        if token is not None:
            try:
                token = resolve_secret(token)
            except KeyError as exc:
                raise ConfigError(exc.args[0], "gateway.bearer_token") from None
        gateway = GatewayConfig(dict(served), bind, limit, token)

    journal = None
    mem = data.get("memory")
    if mem is not None:
        _expect(isinstance(mem, dict), "must be an object", "memory")
        journal = mem.get("journal")
        _expect(journal is None or isinstance(journal, str), "must be a path", "memory.journal")
        if journal is not None and not os.path.isabs(journal):
            journal = str(base / journal)

    return EngineConfig(providers, agents, agent_providers, planner_providers, swarms, gateway, journal)


def load_config(path: str | os.PathLike) -> EngineConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except ValueError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return parse_config(data, Path(path).resolve().parent)


class Engine:
    """Owns agents, swarms, the shared memory store and conversation state."""

    def __init__(
        self,
        agents: dict[str, Agent],
        swarms: dict[str, LightSwarm] | None = None,
        memory: MemoryStore | None = None,
    ):
        self.agents = agents
        self.swarms = swarms or {}
        self.memory = memory

    def targets(self) -> list[str]:
        return list(self.agents) + [SWARM_PREFIX + e for e in self.swarms]

    def has_target(self, target: str) -> bool:
        if target.startswith(SWARM_PREFIX):
            return target[len(SWARM_PREFIX):] in self.swarms
        return target in self.agents

    def run(self, target: str, query: str, options: RunOptions = RunOptions()) -> tuple[RunResult, Optional[HandoffTrace]]:
        if target.startswith(SWARM_PREFIX):
            entry = target[len(SWARM_PREFIX):]
            return self.swarms[entry].run(entry, query, options)
        return self.agents[target].run(query, options), None

    def run_stream(self, target: str, query: str, options: RunOptions = RunOptions()) -> tuple[RunStream, Optional[HandoffTrace]]:
        if target.startswith(SWARM_PREFIX):
            entry = target[len(SWARM_PREFIX):]
            return self.swarms[entry].run_stream(entry, query, options)
        return self.agents[target].run_stream(query, options), None

    def user_memories(self, user_id: str) -> list:
        if self.memory is None:
            return []
        return self.memory.records(MemoryScope.user(user_id))

    def close(self) -> None:
        if self.memory is not None:
            self.memory.close()


def build_engine(
    cfg: EngineConfig,
    scripted: dict[str, ScriptedProvider] | None = None,
    handlers: dict[str, Callable[..., Any]] | None = None,
) -> Engine:
    """Instantiate everything ``cfg`` describes.

    ``scripted`` substitutes providers by config name (offline mode); any
    provider not in it is reached over HTTP.
    """
    scripted = scripted or {}
    all_handlers = dict(builtins.HANDLERS)
    all_handlers.update(handlers or {})

    handles: dict[str, Provider] = {}

    def handle(name: str) -> Provider:
        if name not in handles:
            handles[name] = scripted.get(name) or OpenAIProvider(cfg.providers[name])
        return handles[name]

    memory = MemoryStore(cfg.memory_journal) if cfg.memory_journal else MemoryStore()
    conversations = ConversationBook()
    agents = {}
    for acfg in cfg.agents:
        planner_name = cfg.planner_providers.get(acfg.name)
        agents[acfg.name] = Agent(
            acfg,
            memory_store=memory,
            provider=handle(cfg.agent_providers[acfg.name]),
            planner=handle(planner_name) if planner_name else None,
            handlers=all_handlers,
            conversations=conversations,
        )
    swarms = {}
    for scfg in cfg.swarms:
        sw = LightSwarm(router_provider=handle(scfg.router_provider) if scfg.router_provider else None)
        for m in scfg.members:
            sw.register_agent(agents[m.agent], capacity=m.capacity)
        swarms[scfg.entry] = sw
    return Engine(agents, swarms, memory)
