import json
import math
import re
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from liteswarm.errors import EmptyText
from liteswarm.memory import MemoryScope, MemoryStore, lexical_score, tokenize

U1 = MemoryScope.user("user_01")
SANYA_1 = "User wants to travel to Sanya"
SANYA_2 = "User's friends have traveled to Sanya."


def oracle_score(q_tokens: set, t_tokens: set) -> float:
    if not q_tokens or not t_tokens:
        return 0.0
    common = sum(1 for tok in q_tokens if tok in t_tokens)
    return common / math.sqrt(len(q_tokens) * len(t_tokens))


def test_score_worked_example():
    # Q = {travel,to,sanya}, T = {user,wants,to,travel,sanya}: 3 shared, sizes 3 and 5
    assert lexical_score("travel to Sanya", SANYA_1) == pytest.approx(3 / math.sqrt(15))
    assert lexical_score("travel to Sanya", SANYA_1) == pytest.approx(0.7746, abs=1e-4)


def test_score_identical_and_disjoint():
    assert lexical_score("Where should I travel?", "where SHOULD i travel") == 1.0
    assert lexical_score("alpha beta", "gamma delta") == 0.0
    assert lexical_score("", "anything") == 0.0
    assert lexical_score("!!!", "anything") == 0.0


def test_tokenizer_splits_on_non_alphanumerics():
    assert tokenize("User's friends,  have-traveled!") == {"user", "s", "friend", "have", "travel"}
    assert tokenize("abc123 x9") == {"abc123", "x9"}


def test_inflections_meet():
    # "traveled" must reach "travel" for the recall scenario to work
    assert lexical_score("Where should I travel?", SANYA_2) > 0


def test_store_then_retrieve():
    store = MemoryStore()
    rid = store.store(SANYA_1, U1)
    hits = store.retrieve("travel", U1)
    assert [h.record.record_id for h in hits] == [rid]


@pytest.mark.parametrize("bad", ["", "   ", "\n\t"])
def test_store_rejects_empty(bad):
    with pytest.raises(EmptyText):
        MemoryStore().store(bad, U1)


def test_identical_text_twice_gives_two_records():
    store = MemoryStore()
    a = store.store("same text", U1)
    b = store.store("same text", U1)
    assert a != b
    recs = store.records(U1)
    assert len(recs) == 2
    assert recs[0].created_at < recs[1].created_at
    # newer record first among equal scores
    assert [h.record.record_id for h in store.retrieve("same text", U1)] == [b, a]


def test_retrieve_on_empty_store():
    assert MemoryStore().retrieve("anything", U1) == []


def test_sanya_recall():
    store = MemoryStore()
    store.store(SANYA_1, U1)
    store.store(SANYA_2, U1)
    hits = store.retrieve("Where should I travel?", U1)
    assert {h.record.text for h in hits} == {SANYA_1, SANYA_2}
    assert all(h.score > 0 for h in hits)


def test_zero_scores_excluded_and_k_respected():
    store = MemoryStore()
    for i in range(8):
        store.store(f"note {i} about sanya", U1)
    store.store("completely unrelated", U1)
    hits = store.retrieve("sanya", U1, k=3)
    assert len(hits) == 3
    assert all("sanya" in h.record.text for h in hits)
    with pytest.raises(ValueError):
        store.retrieve("sanya", U1, k=0)


def test_forget_scope():
    store = MemoryStore()
    assert store.forget_scope(U1) == 0
    other = MemoryScope.user("user_02")
    for t in ("a sanya", "b sanya", "c sanya"):
        store.store(t, U1)
    store.store("b sanya", other)
    before = store.retrieve("sanya", other)
    assert store.forget_scope(U1) == 3
    assert store.retrieve("sanya", U1) == []
    assert store.retrieve("sanya", other) == before


def test_scope_validation():
    with pytest.raises(ValueError):
        MemoryScope.user("")
    with pytest.raises(ValueError):
        MemoryScope("team", "x")


def test_journal_roundtrip(tmp_path):
    path = tmp_path / "memory.jsonl"
    store = MemoryStore(path)
    r1 = store.store(SANYA_1, U1)
    store.store("shared rule", MemoryScope.shared("Agent A"))
    store.store("gone soon", MemoryScope.user("temp"))
    store.forget_scope(MemoryScope.user("temp"))
    store.close()

    first = json.loads(path.read_text().splitlines()[0])
    assert set(first) == {"record_id", "scope_kind", "scope_id", "text", "created_at"}
    assert first["record_id"] == r1 and first["scope_kind"] == "user" and first["scope_id"] == "user_01"

    reopened = MemoryStore(path)
    assert [r.text for r in reopened.records(U1)] == [SANYA_1]
    assert reopened.records(MemoryScope.user("temp")) == []
    r4 = reopened.store("after restart", U1)
    recs = reopened.records(U1)
    assert recs[-1].record_id == r4
    assert recs[-1].created_at > recs[0].created_at
    reopened.close()


def test_concurrent_stores_get_unique_ordered_sequence():
    store = MemoryStore()

    def worker(n):
        for i in range(50):
            store.store(f"w{n} item {i}", MemoryScope.user(f"u{n % 3}"))

    threads = [threading.Thread(target=worker, args=(n,)) for n in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    seqs = [r.created_at for n in range(3) for r in store.records(MemoryScope.user(f"u{n}"))]
    assert len(seqs) == 400
    assert sorted(seqs) == list(range(1, 401))


# -- properties ---------------------------------------------------------------

# short tokens are left untouched by inflection stripping
_tok = st.text("abcdefghijklmnopqrstuvwxyz", min_size=1, max_size=3)
_sentence = st.lists(_tok, min_size=1, max_size=6).map(" ".join)


@settings(max_examples=60, deadline=None)
@given(
    ops=st.lists(st.tuples(st.integers(0, 11), _sentence), min_size=1, max_size=60),
    queries=st.lists(st.tuples(st.integers(0, 11), _sentence), min_size=1, max_size=10),
)
def test_scope_isolation(ops, queries):
    store = MemoryStore()
    owner = {}
    for scope_no, text in ops:
        kind = "user" if scope_no % 2 == 0 else "agent_shared"
        scope = MemoryScope(kind, f"s{scope_no}")
        owner[store.store(text, scope)] = scope
    for scope_no, q in queries:
        scope = MemoryScope("user" if scope_no % 2 == 0 else "agent_shared", f"s{scope_no}")
        for hit in store.retrieve(q, scope, k=100):
            assert owner[hit.record.record_id] == scope
            assert hit.record.scope == scope


@settings(max_examples=40, deadline=None)
@given(texts=st.lists(_sentence, min_size=1, max_size=30), query=_sentence)
def test_determinism(texts, query):
    def replay():
        store = MemoryStore()
        for t in texts:
            store.store(t, U1)
        return [(h.record.text, h.record.created_at, h.score) for h in store.retrieve(query, U1, k=10)]

    assert replay() == replay()


@settings(max_examples=100, deadline=None)
@given(
    query=st.sets(_tok, min_size=1, max_size=6),
    text=st.sets(_tok, min_size=1, max_size=8),
    data=st.data(),
)
def test_replacing_unshared_with_shared_token_raises_score(query, text, data):
    unshared = sorted(text - query)
    missing = sorted(query - text)
    if not unshared or not missing:
        return
    out = data.draw(st.sampled_from(unshared))
    into = data.draw(st.sampled_from(missing))
    before = lexical_score(" ".join(sorted(query)), " ".join(sorted(text)))
    after = lexical_score(" ".join(sorted(query)), " ".join(sorted((text - {out}) | {into})))
    assert after > before


@settings(max_examples=40, deadline=None)
@given(texts=st.lists(_sentence, min_size=0, max_size=100), query=_sentence, k=st.integers(1, 20))
def test_ranking_matches_full_sort_oracle(texts, query, k):
    store = MemoryStore()
    for t in texts:
        store.store(t, U1)
    recs = store.records(U1)
    q_tokens = {t for t in re.split(r"[^0-9a-z]+", query.lower()) if t}
    scored = []
    for r in recs:
        s = oracle_score(q_tokens, {t for t in re.split(r"[^0-9a-z]+", r.text.lower()) if t})
        if s > 0:
            scored.append((s, r))
    scored.sort(key=lambda sr: (-sr[0], -sr[1].created_at, sr[1].record_id))
    expected = [(r.record_id, pytest.approx(s)) for s, r in scored[:k]]
    got = [(h.record.record_id, h.score) for h in store.retrieve(query, U1, k=k)]
    assert got == expected
