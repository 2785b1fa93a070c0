"""Eight-step planning pass run on a (possibly separate) planning model."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, fields
from typing import Optional

from .errors import InvalidConfig
from .provider import Provider, ProviderConfig
from .types import ChatMessage

logger = logging.getLogger(__name__)

STEP_FIELDS = (
    "problem_definition",
    "information_gathering",
    "problem_decomposition",
    "multi_dimensional_analysis",
    "establishing_connections",
    "solution_generation",
    "evaluation_and_selection",
    "implementation_and_feedback",
)

HEADINGS = (
    "Problem Definition",
    "Information Gathering",
    "Problem Decomposition",
    "Multi-Dimensional Analysis",
    "Establishing Connections",
    "Solution Generation",
    "Evaluation and Selection",
    "Implementation and Feedback",
)

STEP_GUIDANCE = (
    "state the core problem and the objectives",
    "list the data and information relevant to the problem",
    "split the problem into sub-problems",
    "examine each sub-problem from several perspectives",
    "describe how the sub-problems depend on each other",
    "propose candidate solutions for each sub-problem",
    "weigh feasibility, impact and risk, and pick one solution",
    "describe how to carry out the chosen solution and what feedback to watch",
)

CONTEXT_TURNS = 4
CONTEXT_TURN_CHARS = 500

# "3. Problem Decomposition" with optional markdown emphasis and a trailing colon
_HEADING_RE = re.compile(
    r"^[ \t#>*_]*([1-8])\.[ \t]*[*_]*[ \t]*("
    + "|".join(re.escape(h) for h in HEADINGS)
    + r")(?![0-9A-Za-z])[ \t]*[*_]*[ \t]*:?",
    re.IGNORECASE | re.MULTILINE,
)


@dataclass(frozen=True)
class PlanSteps:
    problem_definition: Optional[str] = None
    information_gathering: Optional[str] = None
    problem_decomposition: Optional[str] = None
    multi_dimensional_analysis: Optional[str] = None
    establishing_connections: Optional[str] = None
    solution_generation: Optional[str] = None
    evaluation_and_selection: Optional[str] = None
    implementation_and_feedback: Optional[str] = None

    def populated(self) -> list[tuple[int, str]]:
        return [
            (i, getattr(self, f.name))
            for i, f in enumerate(fields(self))
            if getattr(self, f.name) is not None
        ]


@dataclass(frozen=True)
class ThoughtPlan:
    raw_text: str = ""
    steps: PlanSteps = field(default_factory=PlanSteps)

    @property
    def is_empty(self) -> bool:
        return not self.raw_text and not self.steps.populated()


@dataclass(frozen=True)
class ToTConfig:
    enabled: bool = False
    provider: Optional[ProviderConfig] = None

    def __post_init__(self):
        if self.enabled and self.provider is None:
            raise InvalidConfig("tree-of-thought planning is enabled but no planning provider is configured")


def parse_plan(text: str) -> ThoughtPlan:
    """Split a planner reply on the eight numbered headings.

    Case-insensitive; any order; later duplicates win; text before the first
    heading is dropped.
    """
    matches = [
        m for m in _HEADING_RE.finditer(text)
        if int(m.group(1)) - 1 == _heading_index(m.group(2))
    ]
    values: dict[str, str] = {}
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        body = text[m.end():end].strip()
        name = STEP_FIELDS[_heading_index(m.group(2))]
        if body:
            values[name] = body
        else:
            values.pop(name, None)
    return ThoughtPlan(raw_text=text, steps=PlanSteps(**values))


def _heading_index(title: str) -> int:
    lowered = title.lower()
    return next(i for i, h in enumerate(HEADINGS) if h.lower() == lowered)


def render_plan(plan: ThoughtPlan) -> str:
    populated = plan.steps.populated()
    if not populated:
        if not plan.raw_text:
            return ""
        if plan.raw_text.startswith("PLAN:"):
            return plan.raw_text
        return f"PLAN:\n{plan.raw_text}"
    # body stays on the heading line so its first line can never read as a heading
    sections = [f"{i + 1}. {HEADINGS[i]}: {body}" for i, body in populated]
    return "PLAN:\n" + "\n".join(sections)


def planning_prompt(query: str, context_summary: str) -> list[ChatMessage]:
    outline = "\n".join(f"{i + 1}. {h}: {g}" for i, (h, g) in enumerate(zip(HEADINGS, STEP_GUIDANCE)))
    system = (
        "You are a planning assistant. Think through the user's request before it is answered. "
        "Reply with exactly these eight numbered headings, in order, each followed by a colon "
        "and your notes for that step:\n" + outline
    )
    user = f"Request:\n{query}"
    if context_summary:
        user = f"Recent conversation:\n{context_summary}\n\n{user}"
    return [ChatMessage.system(system), ChatMessage.user(user)]


def summarize_context(history: list[ChatMessage]) -> str:
    turns = [m for m in history if m.role in ("user", "assistant") and m.content][-CONTEXT_TURNS:]
    return "\n".join(f"{m.role}: {m.content[:CONTEXT_TURN_CHARS]}" for m in turns)


def plan(provider: Provider, query: str, context_summary: str = "") -> ThoughtPlan:
    """Ask the planning model for an eight-step plan.

    Provider failures are logged and produce an empty plan so the caller can
    carry on without one.
    """
    if not query or not query.strip():
        raise ValueError("query must be non-empty")
    try:
        reply = provider.complete(planning_prompt(query, context_summary))
    except Exception as exc:  # noqa: BLE001 - planning is best-effort
        logger.warning("planner failed, continuing without a plan: %s", exc)
        return ThoughtPlan()
    return parse_plan(reply.content)
