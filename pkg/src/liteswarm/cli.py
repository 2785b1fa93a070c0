"""``liteswarm`` command line: chat, serve, toolgen, validate."""

from __future__ import annotations

import argparse
import logging
import signal
import sys
from pathlib import Path
from typing import Optional, Sequence

from .agent import RunOptions, RunResult
from .engine import SWARM_PREFIX, Engine, EngineConfig, build_engine, load_config
from .errors import BindError, ConfigError, EmptyInput, GenerationInvalid, InvalidSpec, SpecParseError
from .provider import OpenAIProvider, load_script_fixture
from .toolgen import GenerationRequest, generate, validate_spec_file
from .tot import render_plan

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_INVALID = 3
EXIT_EXISTS = 4


def _err(msg: str) -> None:
    print(f"liteswarm: {msg}", file=sys.stderr)


def _load(args) -> tuple[EngineConfig, dict]:
    cfg = load_config(args.config)
    scripts = {}
    if args.provider_script:
        try:
            scripts = load_script_fixture(args.provider_script)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot load provider script: {exc}", "--provider-script") from None
        unknown = set(scripts) - set(cfg.providers)
        if unknown:
            raise ConfigError(f"provider script names unknown providers {sorted(unknown)}", "--provider-script")
    return cfg, scripts


def _resolve_target(cfg: EngineConfig, name: str) -> str:
    if name.startswith(SWARM_PREFIX):
        if name[len(SWARM_PREFIX):] not in {s.entry for s in cfg.swarms}:
            raise ConfigError(f"unknown swarm: {name}")
        return name
    if name not in cfg.agent_providers:
        raise ConfigError(f"unknown agent: {name}")
    return name


def format_trace(result: RunResult) -> list[str]:
    lines = []
    for ev in result.trace:
        kind = ev["type"]
        if kind == "provider_call":
            lines.append(f"[trace] provider call {ev['iteration']} -> {ev['finish_reason']}")
        elif kind == "tool_call":
            lines.append(f"[trace] tool call {ev['name']} {ev['arguments']}")
        elif kind == "tool_result":
            lines.append(f"[trace] tool result {ev['name']} {ev['status']}: {ev['content'][:200]}")
        elif kind == "tool_masked":
            lines.append(f"[trace] tool masked {ev['name']}")
        elif kind == "memory":
            lines.append(f"[trace] memories injected {len(ev['records'])}")
        elif kind == "error":
            lines.append(f"[trace] error {ev['error']}: {ev['message']}")
    return lines


def cmd_chat(args) -> int:
    try:
        cfg, scripts = _load(args)
        target = _resolve_target(cfg, args.target)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    engine = build_engine(cfg, scripts)
    out = sys.stdout
    try:
        for line in sys.stdin:
            query = line.strip()
            if not query:
                continue
            if query == "/quit":
                break
            if query == "/memories":
                records = engine.user_memories(args.user)
                if not records:
                    print("(no memories)", file=out)
                for rec in records:
                    print(f"- {rec.text}", file=out)
                continue
            options = RunOptions(user_id=args.user, stream=args.stream)
            hops = None
            if args.stream:
                stream, hops = engine.run_stream(target, query, options)
                for delta in stream:
                    out.write(delta)
                    out.flush()
                out.write("\n")
                result = stream.result
            else:
                result, hops = engine.run(target, query, options)
                print(result.final_text, file=out)
            if args.show_plan and result.plan is not None:
                print(render_plan(result.plan) or "PLAN: (none)", file=out)
            if args.show_trace:
                if hops is not None:
                    for hop in hops.hops:
                        print(f"[trace] handoff {hop.from_agent} -> {hop.to_agent}", file=out)
                for trace_line in format_trace(result):
                    print(trace_line, file=out)
            out.flush()
    finally:
        engine.close()
    return EXIT_OK


def cmd_serve(args) -> int:
    from .gateway import GatewayServer

    try:
        cfg, scripts = _load(args)
        if cfg.gateway is None:
            raise ConfigError("a gateway section is required to serve", "gateway")
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    engine = build_engine(cfg, scripts)
    try:
        server = GatewayServer(engine, cfg.gateway)
    except BindError as exc:
        _err(str(exc))
        engine.close()
        return EXIT_FAIL
    print(f"liteswarm gateway listening on {server.url}", flush=True)
    # uvicorn drains in-flight requests, then re-raises the signal it caught
    previous = signal.signal(signal.SIGTERM, _interrupt)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        signal.signal(signal.SIGTERM, previous)
        engine.close()
    return EXIT_OK


def _interrupt(signum, frame):
    raise KeyboardInterrupt


def cmd_toolgen(args) -> int:
    try:
        cfg, scripts = _load(args)
        pname = args.provider or next(iter(cfg.providers))
        if pname not in cfg.providers:
            raise ConfigError(f"unknown provider {pname!r}", "--provider")
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    try:
        doc = sys.stdin.read() if args.doc == "-" else Path(args.doc).read_text(encoding="utf-8")
    except OSError as exc:
        _err(f"cannot read documentation: {exc}")
        return EXIT_CONFIG
    provider = scripts.get(pname) or OpenAIProvider(cfg.providers[pname])
    request = GenerationRequest(doc, args.out, overwrite=args.force, max_repair_rounds=args.repair_rounds)
    try:
        report = generate(provider, request)
    except EmptyInput as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except GenerationInvalid as exc:
        _err(str(exc))
        for e in exc.errors:
            print(f"  {e}", file=sys.stderr)
        return EXIT_INVALID
    except FileExistsError as exc:
        _err(f"{exc} (use --force)")
        return EXIT_EXISTS
    except OSError as exc:
        _err(str(exc))
        return EXIT_FAIL
    for path in report.files_written:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_validate(args) -> int:
    ok = True
    for p in args.paths:
        name = Path(p).name
        try:
            spec = validate_spec_file(p)
        except FileNotFoundError:
            ok = False
            print(f"FAIL {name}: not found")
        except (SpecParseError, InvalidSpec, OSError, UnicodeDecodeError) as exc:
            ok = False
            print(f"FAIL {name}: {exc}")
        else:
            print(f"OK {spec.name}")
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--provider-script", default=argparse.SUPPRESS, metavar="PATH",
        help="JSON fixture of scripted replies per provider name (offline mode)",
    )
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="liteswarm", parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    chat = sub.add_parser("chat", parents=[common], help="interactive chat with an agent or swarm")
    chat.add_argument("config")
    chat.add_argument("target", help="agent name, or swarm:<entry agent>")
    chat.add_argument("--user", default="default")
    chat.add_argument("--stream", action="store_true")
    chat.add_argument("--show-plan", action="store_true")
    chat.add_argument("--show-trace", action="store_true")
    chat.set_defaults(func=cmd_chat)

    serve = sub.add_parser("serve", parents=[common], help="run the OpenAI-compatible gateway")
    serve.add_argument("config")
    serve.set_defaults(func=cmd_serve)

    toolgen = sub.add_parser("toolgen", parents=[common], help="generate .tool.json files from API docs")
    toolgen.add_argument("config")
    toolgen.add_argument("--doc", required=True, help="documentation file, or - for stdin")
    toolgen.add_argument("--out", required=True)
    toolgen.add_argument("--force", action="store_true")
    toolgen.add_argument("--provider", default=None, help="provider name from the config")
    toolgen.add_argument("--repair-rounds", type=int, default=1)
    toolgen.set_defaults(func=cmd_toolgen)

    validate = sub.add_parser("validate", parents=[common], help="check .tool.json files")
    validate.add_argument("paths", nargs="+")
    validate.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.provider_script = getattr(args, "provider_script", None)
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
