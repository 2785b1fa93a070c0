import threading
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from liteswarm.agent import RunOptions
from liteswarm.errors import DuplicateName, TransportError
from liteswarm.provider import Rule, ScriptedProvider
from liteswarm.swarm import LightSwarm

from .conftest import make_agent, scripted, text

ONBOARDING = "Hello, I am Alice. I need to check if Wang Xiaoming has completed onboarding."
AGENT_D_ANSWER = (
    "Hello, I am Agent D, the HR specialist. Regarding whether Wang Xiaoming has completed onboarding, "
    "I need to check our system records. Please wait a moment."
)
RECEPTION = "Hello, I am Agent A, the front desk receptionist. Sorry, I am currently unable to assist!"


def four_agents(router_rules=None, d_provider=None, a_default=RECEPTION):
    # Agent A doubles as the router, so its router rules only see routing prompts
    a_rules = [Rule(lambda t, key=key: "Current agent:" in t and key in t, reply if isinstance(reply, Exception) else text(reply))
               for key, reply in (router_rules or [("Wang Xiaoming", "Agent D")])]
    a = make_agent(ScriptedProvider(a_rules + [Rule(None, text(a_default))]), name="Agent A",
                   instructions="I am Agent A, the front desk receptionist.",
                   role="Receptionist responsible for welcoming visitors and providing basic information guidance.")
    b = make_agent(scripted(default="I am Agent B. Which meeting room?"), name="Agent B",
                   instructions="I am Agent B, responsible for the reservation of meeting rooms.",
                   role="Meeting room reservation administrator.")
    c = make_agent(scripted(default="I am Agent C, technical support."), name="Agent C",
                   instructions="I am Agent C, a technical support specialist, responsible for handling technical issues.")
    d = make_agent(d_provider or scripted(("onboarding", AGENT_D_ANSWER), default="I am Agent D."), name="Agent D",
                   instructions="I am Agent D, an HR specialist, responsible for handling HR-related questions.",
                   role="HR specialist managing inquiries and processes related to employee onboarding, offboarding, leave, and benefits.")
    return a, b, c, d


def swarm_of(*agents, **kw):
    sw = LightSwarm(**kw)
    sw.register_agent(*agents)
    return sw


def test_register_four_and_duplicates():
    agents = four_agents()
    sw = swarm_of(*agents)
    assert len(sw) == 4
    assert list(sw.agents) == ["Agent A", "Agent B", "Agent C", "Agent D"]
    with pytest.raises(DuplicateName):
        sw.register_agent(make_agent(scripted(), name="Agent A"))


def test_router_prompt_lists_agents_in_order():
    sw = swarm_of(*four_agents())
    prompt = sw.router_prompt("q", "Agent A")[-1].content
    idx = [prompt.index(f"- Agent {x} — ") for x in "ABCD"]
    assert idx == sorted(idx)
    assert "- Agent D — I am Agent D, an HR specialist" in prompt


def test_route_hr_query():
    a, b, c, d = four_agents()
    sw = swarm_of(a, b, c, d)
    decision = sw.route(ONBOARDING, "Agent A")
    assert decision.target == "Agent D"
    assert not decision.was_fallback


def test_single_agent_skips_router():
    p = scripted(default="Agent Z")
    sw = swarm_of(make_agent(p, name="Solo"))
    decision = sw.route("anything", "Solo")
    assert decision.target == "Solo"
    assert p.call_log == []


def test_unregistered_reply_falls_back():
    sw = swarm_of(*four_agents(router_rules=[("Wang", "Agent Z")]))
    decision = sw.route(ONBOARDING, "Agent A")
    assert decision.target == "Agent A"
    assert decision.was_fallback


def test_reply_is_trimmed_and_case_sensitive():
    sw = swarm_of(*four_agents(router_rules=[("Wang", "  Agent D\n")]))
    assert sw.route(ONBOARDING, "Agent A").target == "Agent D"
    sw = swarm_of(*four_agents(router_rules=[("Wang", "agent d")]))
    assert sw.route(ONBOARDING, "Agent A").was_fallback


def test_router_failure_falls_back():
    sw = swarm_of(*four_agents(router_rules=[("Wang", TransportError("router down"))]))
    result, trace = sw.run("Agent A", ONBOARDING)
    assert trace.hops == []
    assert result.final_text


def test_handoff_scenario():
    a, b, c, d = four_agents()
    sw = swarm_of(a, b, c, d)
    result, trace = sw.run("Agent A", ONBOARDING)
    assert [(h.from_agent, h.to_agent) for h in trace.hops] == [("Agent A", "Agent D")]
    assert trace.entry == "Agent A" and trace.final_agent == "Agent D"
    assert result.final_text.startswith("Hello, I am Agent D")
    assert result.agent_name == "Agent D"
    msgs = d.provider.call_log[0].messages
    assert msgs[1].content == "Handed off from Agent A: user query follows."
    assert msgs[-1].content == ONBOARDING
    # the source agent never answered
    assert all("Current agent" in req.messages[-1].content for req in a.provider.call_log)


def test_query_for_entry_has_no_hops():
    a, b, c, d = four_agents(router_rules=[("Wang", "Agent A")])
    result, trace = swarm_of(a, b, c, d).run("Agent A", ONBOARDING)
    assert trace.hops == []
    assert result.final_text == RECEPTION


def test_ping_pong_stops_at_limit():
    def router(reply_for):
        return [Rule(lambda t, cur=cur: f"Current agent: {cur}\n" in t, text(nxt)) for cur, nxt in reply_for.items()]

    rules = router({"Agent A": "Agent B", "Agent B": "Agent A"}) + [Rule(None, text("Agent A says hi"))]
    a = make_agent(ScriptedProvider(rules), name="Agent A")
    b = make_agent(scripted(default="Agent B answers"), name="Agent B")
    sw = swarm_of(a, b)
    result, trace = sw.run("Agent A", "bounce me")
    assert [(h.from_agent, h.to_agent) for h in trace.hops] == [("Agent A", "Agent B"), ("Agent B", "Agent A"), ("Agent A", "Agent B")]
    assert trace.final_agent == "Agent B"
    assert result.final_text == "Agent B answers"


NAMES = ["Agent A", "Agent B", "Agent C", "Agent D"]


@settings(max_examples=60, deadline=None)
@given(replies=st.lists(st.one_of(st.sampled_from(NAMES), st.text(max_size=12)), min_size=1, max_size=6),
       entry=st.sampled_from(NAMES), max_handoffs=st.integers(0, 4))
def test_trace_chaining_and_fallback_totality(replies, entry, max_handoffs):
    queue = list(replies)

    class Router(ScriptedProvider):
        def complete(self, messages, tools=(), temperature=None):
            super().complete(messages, tools, temperature)
            return text(queue.pop(0) if queue else "nobody")

    sw = swarm_of(*four_agents(), router_provider=Router([Rule(None, text(""))]), max_handoffs=max_handoffs)
    result, trace = sw.run(entry, "some request")
    assert len(trace.hops) <= max_handoffs
    assert trace.entry == entry
    if trace.hops:
        assert trace.hops[0].from_agent == entry
        assert trace.hops[-1].to_agent == trace.final_agent
    for prev, nxt in zip(trace.hops, trace.hops[1:]):
        assert prev.to_agent == nxt.from_agent
    assert result.agent_name == trace.final_agent
    assert isinstance(result.final_text, str)


def test_capacity_gating_excludes_busy_agent():
    release = threading.Event()
    entered = threading.Event()
    log, lock = [], threading.Lock()

    class SlowD(ScriptedProvider):
        def complete(self, messages, tools=(), temperature=None):
            with lock:
                log.append("enter")
            entered.set()
            release.wait(5)
            with lock:
                log.append("exit")
            return super().complete(messages, tools, temperature)

    a, b, c, d = four_agents(d_provider=SlowD([Rule(None, text(AGENT_D_ANSWER))]))
    sw = LightSwarm()
    sw.register_agent(a, b, c)
    sw.register_agent(d, capacity=1)
    assert sw.capacity("Agent D") == 1

    results = {}
    first = threading.Thread(target=lambda: results.setdefault("first", sw.run("Agent A", ONBOARDING)))
    first.start()
    assert entered.wait(5)
    assert sw.in_flight("Agent D") == 1
    # D is busy: the second identical request stays with the receptionist
    second_result, second_trace = sw.run("Agent A", ONBOARDING, RunOptions(user_id="other"))
    assert second_trace.hops == []
    assert second_result.agent_name == "Agent A"
    release.set()
    first.join(5)
    assert results["first"][1].final_agent == "Agent D"
    assert log == ["enter", "exit"]
    assert sw.in_flight("Agent D") == 0


def test_capacity_one_never_runs_twice_at_once():
    active, peak, lock = [0], [0], threading.Lock()

    class Instrumented(ScriptedProvider):
        def complete(self, messages, tools=(), temperature=None):
            with lock:
                active[0] += 1
                peak[0] = max(peak[0], active[0])
            time.sleep(0.03)
            with lock:
                active[0] -= 1
            return super().complete(messages, tools, temperature)

    solo = make_agent(Instrumented([Rule(None, text("done"))]), name="Solo")
    sw = LightSwarm()
    sw.register_agent(solo, capacity=1)
    threads = [threading.Thread(target=sw.run, args=("Solo", "same query", RunOptions(user_id=f"u{i}"))) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert peak[0] == 1


def test_stream_through_swarm():
    a, b, c, d = four_agents()
    sw = swarm_of(a, b, c, d)
    stream, trace = sw.run_stream("Agent A", ONBOARDING)
    assert stream.text() == AGENT_D_ANSWER
    assert trace.final_agent == "Agent D"
    assert stream.result.final_text == AGENT_D_ANSWER


def test_invalid_capacity():
    with pytest.raises(ValueError):
        LightSwarm().register_agent(make_agent(scripted()), capacity=0)
