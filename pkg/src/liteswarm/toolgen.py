"""Turn free-text API documentation into validated ``.tool.json`` files.

The model is asked for declarative tool specs (HTTP or builtin bindings)
rather than executable code. Output is all-or-nothing: either every spec in
the batch validates and is written, or no file is touched.
"""

from __future__ import annotations

import json
import logging
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .errors import EmptyInput, GenerationInvalid, InvalidSpec, SpecParseError
from .provider import Provider
from .tools import ToolSpec
from .types import ChatMessage

logger = logging.getLogger(__name__)

SPEC_SUFFIX = ".tool.json"
MIN_DOC_CHARS = 20

SCHEMA_TEXT = """\
[
  {
    "name": "snake_case_identifier matching ^[a-z][a-z0-9_]{0,63}$",
    "description": "what the tool does, non-empty",
    "params": [
      {"name": "identifier", "ptype": "string|integer|number|boolean",
       "description": "text", "required": true|false, "default": <optional, only when required is false>}
    ],
    "binding": {
      "kind": "http",
      "method": "GET|POST",
      "url_template": "https://host/path/{path_param}",
      "param_mapping": {"<param name>": "path|query|body"},
      "static_headers": {},
      "timeout": 10
    }
  }
]"""

GENERATOR_ROLE = (
    "You are a tool generator. From the API documentation the user provides, produce "
    "declarative tool specifications that an agent can call. Be accurate: every URL "
    "placeholder must be a declared parameter mapped as path, and body parameters need POST."
)

_FENCE = re.compile(r"```[A-Za-z0-9_-]*[ \t]*\n(.*?)```", re.DOTALL)


@dataclass(frozen=True)
class GenerationRequest:
    doc_text: str
    output_dir: str | os.PathLike
    overwrite: bool = False
    max_repair_rounds: int = 1


@dataclass
class GenerationReport:
    specs: list[ToolSpec] = field(default_factory=list)
    files_written: list[Path] = field(default_factory=list)
    repair_rounds_used: int = 0
    warnings: list[str] = field(default_factory=list)


def generation_prompt(doc_text: str) -> list[ChatMessage]:
    user = (
        "API documentation:\n"
        f"{doc_text.strip()}\n\n"
        "Produce one tool per distinct API operation. Output a single fenced ```json block "
        "containing a JSON list of tool specs with exactly this shape and these field names:\n"
        f"{SCHEMA_TEXT}\n"
        "Output nothing outside the fenced block."
    )
    return [ChatMessage.system(GENERATOR_ROLE), ChatMessage.user(user)]


def repair_prompt(errors: list[str]) -> ChatMessage:
    listed = "\n".join(f"- {e}" for e in errors)
    return ChatMessage.user(
        "The tool specs you returned failed validation:\n"
        f"{listed}\n"
        "Return the complete corrected list in a single fenced ```json block."
    )


def extract_block(reply: str) -> str:
    m = _FENCE.search(reply)
    return m.group(1) if m else reply


def parse_specs(reply: str) -> tuple[list[ToolSpec], list[str]]:
    """Parse and validate a generator reply; returns (specs, errors)."""
    try:
        data = json.loads(extract_block(reply))
    except ValueError as exc:
        return [], [f"output is not valid JSON: {exc}"]
    if isinstance(data, dict):
        data = [data]
    if not isinstance(data, list) or not data:
        return [], ["output must be a non-empty JSON list of tool specs"]
    specs, errors, seen = [], [], set()
    for i, item in enumerate(data):
        label = item.get("name") if isinstance(item, dict) else None
        try:
            spec = ToolSpec.from_json(item)
        except InvalidSpec as exc:
            errors.append(f"spec[{i}] ({label or '?'}): field '{exc.field}': {exc}")
            continue
        if spec.name in seen:
            errors.append(f"spec[{i}] ({spec.name}): duplicate tool name")
            continue
        seen.add(spec.name)
        specs.append(spec)
    return specs, errors


def spec_path(output_dir: str | os.PathLike, spec: ToolSpec) -> Path:
    return Path(output_dir) / f"{spec.name}{SPEC_SUFFIX}"


def write_spec_file(spec: ToolSpec, output_dir: str | os.PathLike) -> Path:
    path = spec_path(output_dir, spec)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=".tmp-", suffix=SPEC_SUFFIX)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(spec.to_json(), fh, indent=2, ensure_ascii=False)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def validate_spec_file(path: str | os.PathLike) -> ToolSpec:
    with open(path, encoding="utf-8") as fh:
        raw = fh.read()
    try:
        data = json.loads(raw)
    except ValueError as exc:
        raise SpecParseError(f"{path}: not valid JSON: {exc}") from exc
    return ToolSpec.from_json(data)


def generate(provider: Provider, request: GenerationRequest) -> GenerationReport:
    doc = (request.doc_text or "").strip()
    if not doc:
        raise EmptyInput("API documentation is empty")
    if len(doc) < MIN_DOC_CHARS:
        raise EmptyInput(f"API documentation is too short (need at least {MIN_DOC_CHARS} characters)")
    if request.max_repair_rounds < 0:
        raise ValueError("max_repair_rounds must be >= 0")

    report = GenerationReport()
    messages = generation_prompt(doc)
    reply = provider.complete(messages, temperature=0.0).content
    specs, errors = parse_specs(reply)
    while errors and report.repair_rounds_used < request.max_repair_rounds:
        report.repair_rounds_used += 1
        report.warnings.extend(f"round {report.repair_rounds_used - 1}: {e}" for e in errors)
        logger.info("tool generation produced %d errors; asking for a repair", len(errors))
        messages = messages + [ChatMessage.assistant(reply), repair_prompt(errors)]
        reply = provider.complete(messages, temperature=0.0).content
        specs, errors = parse_specs(reply)
    if errors:
        raise GenerationInvalid(
            f"tool generation failed validation after {report.repair_rounds_used} repair round(s)",
            errors,
        )

    out = Path(request.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    targets = [spec_path(out, s) for s in specs]
    if not request.overwrite:
        existing = [str(p) for p in targets if p.exists()]
        if existing:
            raise FileExistsError(f"refusing to overwrite: {', '.join(existing)}")

    written: list[Path] = []
    try:
        for spec in specs:
            written.append(write_spec_file(spec, out))
    except OSError:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    report.specs = specs
    report.files_written = written
    return report
