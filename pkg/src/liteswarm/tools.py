"""Declarative tool specs, function-calling schemas and tool execution."""

from __future__ import annotations

import json
import logging
import re
import threading
from dataclasses import dataclass, field
from string import Formatter
from typing import Any, Callable, Literal, Optional, Union
from urllib.parse import quote

import httpx

from .errors import (
    ArgumentError,
    DuplicateName,
    InvalidSpec,
    MalformedArguments,
    MissingRequired,
    TypeMismatch,
    UnknownParam,
)
from .types import ToolCall, ToolResult

logger = logging.getLogger(__name__)

NAME_RE = re.compile(r"^[a-z][a-z0-9_]{0,63}$")
MAX_PARAMS = 32
MAX_RESPONSE_BYTES = 16 * 1024
TRUNCATION_MARKER = "...[truncated]"

PTYPES = ("string", "integer", "number", "boolean")
PLACEMENTS = ("path", "query", "body")

_MISSING = object()


def matches_ptype(value: Any, ptype: str) -> bool:
    # bool is an int subclass in Python; keep them apart
    if ptype == "string":
        return isinstance(value, str)
    if ptype == "boolean":
        return isinstance(value, bool)
    if ptype == "integer":
        return isinstance(value, int) and not isinstance(value, bool)
    if ptype == "number":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    return False


@dataclass(frozen=True)
class ParamSpec:
    name: str
    ptype: Literal["string", "integer", "number", "boolean"]
    description: str = ""
    required: bool = False
    default: Any = None

    def to_json(self) -> dict:
        out = {
            "name": self.name,
            "ptype": self.ptype,
            "description": self.description,
            "required": self.required,
        }
        if self.default is not None:
            out["default"] = self.default
        return out


@dataclass(frozen=True)
class Builtin:
    handler: str
    kind: str = field(default="builtin", init=False)

    def to_json(self) -> dict:
        return {"kind": "builtin", "handler": self.handler}


@dataclass(frozen=True)
class Http:
    method: Literal["GET", "POST"]
    url_template: str
    param_mapping: dict = field(default_factory=dict)
    static_headers: dict = field(default_factory=dict)
    timeout: float = 10.0
    kind: str = field(default="http", init=False)

    def placeholders(self) -> set[str]:
        return {name for _, name, _, _ in Formatter().parse(self.url_template) if name is not None}

    def to_json(self) -> dict:
        return {
            "kind": "http",
            "method": self.method,
            "url_template": self.url_template,
            "param_mapping": dict(self.param_mapping),
            "static_headers": dict(self.static_headers),
            "timeout": self.timeout,
        }

    def __hash__(self):
        return hash((self.method, self.url_template))


Binding = Union[Builtin, Http]


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    params: tuple[ParamSpec, ...] = ()
    binding: Binding = field(default_factory=lambda: Builtin("noop"))

    def __post_init__(self):
        if not isinstance(self.params, tuple):
            object.__setattr__(self, "params", tuple(self.params))

    def param(self, name: str) -> Optional[ParamSpec]:
        return next((p for p in self.params if p.name == name), None)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "params": [p.to_json() for p in self.params],
            "binding": self.binding.to_json(),
        }

    @classmethod
    def from_json(cls, data: Any) -> "ToolSpec":
        """Build and validate a spec from its ``.tool.json`` document."""
        if not isinstance(data, dict):
            raise InvalidSpec("tool spec must be a JSON object", "", "object")
        for key in ("name", "description", "params", "binding"):
            if key not in data:
                raise InvalidSpec(f"missing field '{key}'", key, "required field")
        extra = set(data) - {"name", "description", "params", "binding"}
        if extra:
            raise InvalidSpec(f"unknown fields {sorted(extra)}", sorted(extra)[0], "known fields only")
        if not isinstance(data["params"], list):
            raise InvalidSpec("'params' must be a list", "params", "list")
        params = []
        for i, p in enumerate(data["params"]):
            if not isinstance(p, dict):
                raise InvalidSpec(f"params[{i}] must be an object", f"params[{i}]", "object")
            missing = {"name", "ptype", "description", "required"} - set(p)
            if missing:
                key = sorted(missing)[0]
                raise InvalidSpec(f"params[{i}] missing '{key}'", f"params[{i}].{key}", "required field")
            extra = set(p) - {"name", "ptype", "description", "required", "default"}
            if extra:
                raise InvalidSpec(f"params[{i}] has unknown fields {sorted(extra)}", f"params[{i}]", "known fields only")
            if "default" in p and p["default"] is None:
                raise InvalidSpec(f"params[{i}].default must not be null", f"params[{i}].default", "default type")
            params.append(
                ParamSpec(p["name"], p["ptype"], p["description"], p["required"], p.get("default"))
            )
        spec = cls(data["name"], data["description"], tuple(params), binding_from_json(data["binding"]))
        validate_spec(spec)
        return spec


def binding_from_json(data: Any) -> Binding:
    if not isinstance(data, dict):
        raise InvalidSpec("binding must be an object", "binding", "object")
    kind = data.get("kind")
    if kind == "builtin":
        if set(data) - {"kind", "handler"}:
            raise InvalidSpec("builtin binding has unknown fields", "binding", "known fields only")
        handler = data.get("handler")
        if not isinstance(handler, str) or not handler:
            raise InvalidSpec("builtin binding needs a handler name", "binding.handler", "non-empty string")
        return Builtin(handler)
    if kind == "http":
        allowed = {"kind", "method", "url_template", "param_mapping", "static_headers", "timeout"}
        if set(data) - allowed:
            raise InvalidSpec("http binding has unknown fields", "binding", "known fields only")
        if "url_template" not in data or "method" not in data:
            raise InvalidSpec("http binding needs method and url_template", "binding", "required field")
        return Http(
            method=data["method"],
            url_template=data["url_template"],
            param_mapping=dict(data.get("param_mapping") or {}),
            static_headers=dict(data.get("static_headers") or {}),
            timeout=data.get("timeout", 10.0),
        )
    raise InvalidSpec(f"binding kind must be 'builtin' or 'http', got {kind!r}", "binding.kind", "enum")


def validate_spec(spec: ToolSpec) -> None:
    """Raise InvalidSpec naming the first violated invariant."""
    if not isinstance(spec.name, str) or not NAME_RE.match(spec.name):
        raise InvalidSpec(f"tool name {spec.name!r} must match {NAME_RE.pattern}", "name", "identifier")
    if not isinstance(spec.description, str) or not spec.description.strip():
        raise InvalidSpec("description must be non-empty", "description", "non-empty")
    if len(spec.params) > MAX_PARAMS:
        raise InvalidSpec(f"at most {MAX_PARAMS} params allowed", "params", "max params")
    seen = set()
    for p in spec.params:
        where = f"params.{p.name}"
        if not isinstance(p.name, str) or not NAME_RE.match(p.name):
            raise InvalidSpec(f"param name {p.name!r} is not an identifier", where, "identifier")
        if p.name in seen:
            raise InvalidSpec(f"duplicate param name {p.name!r}", where, "unique param names")
        seen.add(p.name)
        if p.ptype not in PTYPES:
            raise InvalidSpec(f"param {p.name!r} has unknown ptype {p.ptype!r}", where + ".ptype", "ptype enum")
        if not isinstance(p.description, str):
            raise InvalidSpec(f"param {p.name!r} description must be a string", where + ".description", "string")
        if not isinstance(p.required, bool):
            raise InvalidSpec(f"param {p.name!r} required must be boolean", where + ".required", "boolean")
        if p.required and p.default is not None:
            raise InvalidSpec(f"required param {p.name!r} must not carry a default", where + ".default", "required => no default")
        if p.default is not None and not matches_ptype(p.default, p.ptype):
            raise InvalidSpec(f"default of {p.name!r} does not match ptype {p.ptype}", where + ".default", "default type")

    b = spec.binding
    if isinstance(b, Builtin):
        if not b.handler:
            raise InvalidSpec("builtin binding needs a handler name", "binding.handler", "non-empty string")
    elif isinstance(b, Http):
        if b.method not in ("GET", "POST"):
            raise InvalidSpec(f"http method must be GET or POST, got {b.method!r}", "binding.method", "method enum")
        if not isinstance(b.url_template, str) or not b.url_template:
            raise InvalidSpec("url_template must be non-empty", "binding.url_template", "non-empty")
        try:
            holes = b.placeholders()
        except ValueError as exc:
            raise InvalidSpec(f"url_template is malformed: {exc}", "binding.url_template", "template syntax")
        for name, where in b.param_mapping.items():
            if spec.param(name) is None:
                raise InvalidSpec(f"param_mapping names undeclared param {name!r}", "binding.param_mapping", "mapped params declared")
            if where not in PLACEMENTS:
                raise InvalidSpec(f"param {name!r} mapped to unknown location {where!r}", "binding.param_mapping", "placement enum")
        for hole in holes:
            if spec.param(hole) is None:
                raise InvalidSpec(f"url_template placeholder {{{hole}}} names undeclared param", "binding.url_template", "placeholders declared")
            if placement(b, hole) != "path":
                raise InvalidSpec(f"placeholder {{{hole}}} must be mapped as path", "binding.param_mapping", "placeholders mapped as path")
        for p in spec.params:
            if placement(b, p.name) == "path" and p.name not in holes:
                raise InvalidSpec(f"path param {p.name!r} has no placeholder in url_template", "binding.url_template", "path params placed")
        if b.method != "POST" and any(placement(b, p.name) == "body" for p in spec.params):
            raise InvalidSpec("body params require method POST", "binding.method", "body => POST")
        if not isinstance(b.timeout, (int, float)) or isinstance(b.timeout, bool) or b.timeout <= 0:
            raise InvalidSpec("timeout must be a positive number", "binding.timeout", "positive")
        if not all(isinstance(k, str) and isinstance(v, str) for k, v in b.static_headers.items()):
            raise InvalidSpec("static_headers must map strings to strings", "binding.static_headers", "string map")
    else:
        raise InvalidSpec("unknown binding", "binding", "binding kind")


def placement(binding: Http, param: str) -> str:
    """Where a param goes: explicit mapping, else path if templated, else query."""
    if param in binding.param_mapping:
        return binding.param_mapping[param]
    if param in binding.placeholders():
        return "path"
    return "query"


def to_wire_schema(spec: ToolSpec) -> dict:
    properties = {}
    for p in spec.params:
        prop: dict[str, Any] = {"type": p.ptype, "description": p.description}
        if p.default is not None:
            prop["default"] = p.default
        properties[p.name] = prop
    return {
        "name": spec.name,
        "description": spec.description,
        "parameters": {
            "type": "object",
            "properties": properties,
            "required": [p.name for p in spec.params if p.required],
        },
    }


def parse_arguments(spec: ToolSpec, arguments_text: str) -> dict:
    """Validate the provider's argument JSON against ``spec``.

    Defaults fill absent optional params. Nothing is coerced, except that an
    integer is accepted where a number is expected.
    """
    text = arguments_text if arguments_text.strip() else "{}"
    try:
        args = json.loads(text)
    except (ValueError, TypeError):
        raise MalformedArguments(
            f"Arguments for tool '{spec.name}' are not valid JSON; send a JSON object."
        )
    if not isinstance(args, dict):
        raise MalformedArguments(
            f"Arguments for tool '{spec.name}' must be a JSON object, got {type(args).__name__}."
        )
    declared = {p.name: p for p in spec.params}
    for key in args:
        if key not in declared:
            raise UnknownParam(
                f"Tool '{spec.name}' has no parameter '{key}'. Valid parameters: "
                f"{', '.join(declared) or '(none)'}.",
                key,
            )
    out = {}
    for p in spec.params:
        if p.name not in args:
            if p.required:
                raise MissingRequired(
                    f"Tool '{spec.name}' requires parameter '{p.name}' ({p.ptype}).", p.name
                )
            if p.default is not None:
                out[p.name] = p.default
            continue
        value = args[p.name]
        if not matches_ptype(value, p.ptype):
            raise TypeMismatch(
                f"Parameter '{p.name}' of tool '{spec.name}' must be of type {p.ptype}, "
                f"got {json.dumps(value)[:80]}.",
                p.name,
            )
        out[p.name] = value
    return out


def truncate(text: str, limit: int = MAX_RESPONSE_BYTES) -> str:
    raw = text.encode("utf-8")
    if len(raw) <= limit:
        return text
    return raw[:limit].decode("utf-8", errors="ignore") + TRUNCATION_MARKER


def _stringify(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def build_url(binding: Http, args: dict) -> str:
    """Fill path placeholders, percent-encoding every reserved character."""
    values = {name: quote(_stringify(args[name]), safe="") for name in binding.placeholders() if name in args}
    out = []
    for literal, name, _, _ in Formatter().parse(binding.url_template):
        out.append(literal)
        if name is not None:
            out.append(values.get(name, ""))
    return "".join(out)


@dataclass
class _Handler:
    fn: Callable[..., Any]
    lock: Optional[threading.Lock]


class ToolRegistry:
    """Holds tool specs plus the builtin handlers they may bind to."""

    def __init__(self, handlers: dict[str, Callable[..., Any]] | None = None, http_client: httpx.Client | None = None):
        self._specs: dict[str, ToolSpec] = {}
        self._handlers: dict[str, _Handler] = {}
        self._http = http_client
        for name, fn in (handlers or {}).items():
            self.register_handler(name, fn)

    def register_handler(self, name: str, fn: Callable[..., Any], serialized: bool = False) -> None:
        """Expose ``fn`` to builtin bindings; ``serialized`` runs it under a lock."""
        self._handlers[name] = _Handler(fn, threading.Lock() if serialized else None)

    def register(self, spec: ToolSpec) -> None:
        validate_spec(spec)
        if spec.name in self._specs:
            raise DuplicateName(f"tool already registered: {spec.name}")
        self._specs[spec.name] = spec

    def get(self, name: str) -> Optional[ToolSpec]:
        return self._specs.get(name)

    @property
    def names(self) -> list[str]:
        return list(self._specs)

    def __iter__(self):
        return iter(self._specs.values())

    def __len__(self) -> int:
        return len(self._specs)

    def wire_schemas(self, exclude: set[str] = frozenset()) -> list[dict]:
        return [to_wire_schema(s) for s in self._specs.values() if s.name not in exclude]

    def execute(self, call: ToolCall) -> ToolResult:
        """Run a tool call. Never raises; failures come back as status=error."""
        try:
            return self._execute(call)
        except Exception as exc:  # noqa: BLE001 - totality is the contract
            logger.exception("tool %s crashed", call.name)
            return ToolResult(call.call_id, "error", f"Tool '{call.name}' failed: {type(exc).__name__}: {exc}")

    def _execute(self, call: ToolCall) -> ToolResult:
        spec = self._specs.get(call.name)
        if spec is None:
            available = ", ".join(self._specs) or "(none)"
            return ToolResult(
                call.call_id, "error",
                f"ToolNotFound: no tool named '{call.name}'. Available tools: {available}.",
            )
        try:
            args = parse_arguments(spec, call.arguments_text)
        except ArgumentError as exc:
            return ToolResult(call.call_id, "error", f"{type(exc).__name__}: {exc}")

        if isinstance(spec.binding, Builtin):
            handler = self._handlers.get(spec.binding.handler)
            if handler is None:
                return ToolResult(
                    call.call_id, "error",
                    f"Tool '{spec.name}' is bound to unknown handler '{spec.binding.handler}'.",
                )
            if handler.lock is not None:
                with handler.lock:
                    out = handler.fn(**args)
            else:
                out = handler.fn(**args)
            return ToolResult(call.call_id, "ok", truncate(str(out)))
        return self._execute_http(call, spec, args)

    def _execute_http(self, call: ToolCall, spec: ToolSpec, args: dict) -> ToolResult:
        b: Http = spec.binding  # type: ignore[assignment]
        url = build_url(b, args)
        query = {k: _stringify(v) for k, v in args.items() if placement(b, k) == "query"}
        body = {k: v for k, v in args.items() if placement(b, k) == "body"}
        client = self._http or httpx.Client()
        try:
            resp = client.request(
                b.method, url,
                params=query or None,
                json=body if b.method == "POST" and body else None,
                headers=dict(b.static_headers),
                timeout=b.timeout,
            )
        except httpx.TimeoutException:
            return ToolResult(call.call_id, "error", f"Timeout: tool '{spec.name}' got no response within {b.timeout}s.")
        except httpx.HTTPError as exc:
            return ToolResult(call.call_id, "error", f"Tool '{spec.name}' request failed: {exc}")
        finally:
            if self._http is None:
                client.close()
        if resp.status_code >= 400:
            return ToolResult(
                call.call_id, "error",
                f"HttpStatus({resp.status_code}): {truncate(resp.text, 1024)}",
            )
        return ToolResult(call.call_id, "ok", truncate(resp.text))


def builtin_tool(fn: Callable[..., Any] | None = None, *, name: str | None = None, description: str | None = None):
    """Describe a plain Python function as a builtin ToolSpec.

    Param types come from annotations (str/int/float/bool), defaults from the
    signature, description from the docstring's first paragraph.
    """
    import inspect

    def build(f):
        sig = inspect.signature(f)
        type_map = {str: "string", int: "integer", float: "number", bool: "boolean",
                    "str": "string", "int": "integer", "float": "number", "bool": "boolean"}
        params = []
        for p in sig.parameters.values():
            ptype = type_map.get(p.annotation, "string")
            has_default = p.default is not inspect.Parameter.empty
            params.append(ParamSpec(p.name, ptype, "", not has_default, p.default if has_default else None))
        doc = inspect.getdoc(f) or f.__name__
        desc = description or doc.strip().split("\n\n")[0].strip()
        tool_name = name or f.__name__
        return ToolSpec(tool_name, desc, tuple(params), Builtin(tool_name)), f

    if fn is not None:
        return build(fn)
    return build
