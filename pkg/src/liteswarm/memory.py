"""Scoped long-term memory with a deterministic lexical relevance score.

The store keeps records in memory and can mirror every write to an
append-only JSON-lines journal, which is replayed on start-up.
"""

from __future__ import annotations

import json
import math
import os
import re
import threading
import uuid
from dataclasses import dataclass
from typing import Literal

from .errors import EmptyText

ScopeKind = Literal["user", "agent_shared"]

DEFAULT_K = 5

_SPLIT = re.compile(r"[^0-9a-z]+")


@dataclass(frozen=True, order=True)
class MemoryScope:
    kind: ScopeKind
    id: str

    def __post_init__(self):
        if self.kind not in ("user", "agent_shared"):
            raise ValueError(f"unknown scope kind: {self.kind!r}")
        if not self.id:
            raise ValueError("scope id must be non-empty")

    @classmethod
    def user(cls, user_id: str) -> "MemoryScope":
        return cls("user", user_id)

    @classmethod
    def shared(cls, agent_name: str) -> "MemoryScope":
        return cls("agent_shared", agent_name)


@dataclass(frozen=True)
class MemoryRecord:
    record_id: str
    scope: MemoryScope
    text: str
    created_at: int

    def to_json(self) -> dict:
        return {
            "record_id": self.record_id,
            "scope_kind": self.scope.kind,
            "scope_id": self.scope.id,
            "text": self.text,
            "created_at": self.created_at,
        }

    @classmethod
    def from_json(cls, data: dict) -> "MemoryRecord":
        return cls(
            record_id=data["record_id"],
            scope=MemoryScope(data["scope_kind"], data["scope_id"]),
            text=data["text"],
            created_at=int(data["created_at"]),
        )


@dataclass(frozen=True)
class ScoredMemory:
    record: MemoryRecord
    score: float


def normalize_token(token: str) -> str:
    """Strip a few common English inflections so "traveled" meets "travel"."""
    if len(token) > 5 and token.endswith("ing"):
        return token[:-3]
    if len(token) > 4 and token.endswith("ed"):
        return token[:-2]
    if len(token) > 3 and token.endswith("s") and not token.endswith("ss"):
        return token[:-1]
    return token


def tokenize(text: str) -> set[str]:
    return {normalize_token(t) for t in _SPLIT.split(text.lower()) if t}


def lexical_score(query: str, text: str) -> float:
    """Cosine overlap of the two token sets: |Q & T| / sqrt(|Q| * |T|)."""
    q, t = tokenize(query), tokenize(text)
    if not q or not t:
        return 0.0
    return len(q & t) / math.sqrt(len(q) * len(t))


def rank_key(item: ScoredMemory):
    # score desc, newest first, then record_id asc
    return (-item.score, -item.record.created_at, item.record.record_id)


class MemoryStore:
    """In-memory store, optionally journaled to ``journal_path``."""

    def __init__(self, journal_path: str | os.PathLike | None = None):
        self._lock = threading.RLock()
        self._records: dict[MemoryScope, list[MemoryRecord]] = {}
        self._ids: set[str] = set()
        self._seq = 0
        self.journal_path = journal_path
        self._journal = None
        if journal_path is not None:
            self._replay(journal_path)
            self._journal = open(journal_path, "a", encoding="utf-8")

    def _replay(self, path) -> None:
        if not os.path.exists(path):
            return
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                entry = json.loads(line)
                if entry.get("op") == "forget":
                    scope = MemoryScope(entry["scope_kind"], entry["scope_id"])
                    self._drop(scope)
                    continue
                rec = MemoryRecord.from_json(entry)
                self._records.setdefault(rec.scope, []).append(rec)
                self._ids.add(rec.record_id)
                self._seq = max(self._seq, rec.created_at)

    def _append_journal(self, entry: dict) -> None:
        if self._journal is None:
            return
        self._journal.write(json.dumps(entry, ensure_ascii=False) + "\n")
        self._journal.flush()

    def close(self) -> None:
        with self._lock:
            if self._journal is not None:
                self._journal.close()
                self._journal = None

    def store(self, text: str, scope: MemoryScope) -> str:
        if not text or not text.strip():
            raise EmptyText("memory text must be non-empty")
        with self._lock:
            self._seq += 1
            record_id = uuid.uuid4().hex
            while record_id in self._ids:
                record_id = uuid.uuid4().hex
            rec = MemoryRecord(record_id, scope, text, self._seq)
            self._append_journal(rec.to_json())
            self._records.setdefault(scope, []).append(rec)
            self._ids.add(record_id)
            return record_id

    def records(self, scope: MemoryScope) -> list[MemoryRecord]:
        with self._lock:
            return list(self._records.get(scope, ()))

    def retrieve(self, query: str, scope: MemoryScope, k: int = DEFAULT_K) -> list[ScoredMemory]:
        if k < 1:
            raise ValueError("k must be >= 1")
        snapshot = self.records(scope)
        scored = []
        for rec in snapshot:
            score = lexical_score(query, rec.text)
            if score > 0:
                scored.append(ScoredMemory(rec, score))
        scored.sort(key=rank_key)
        return scored[:k]

    def _drop(self, scope: MemoryScope) -> int:
        removed = self._records.pop(scope, [])
        for rec in removed:
            self._ids.discard(rec.record_id)
        return len(removed)

    def forget_scope(self, scope: MemoryScope) -> int:
        with self._lock:
            count = self._drop(scope)
            if count:
                self._append_journal({"op": "forget", "scope_kind": scope.kind, "scope_id": scope.id})
            return count

    def __len__(self) -> int:
        with self._lock:
            return sum(len(v) for v in self._records.values())
