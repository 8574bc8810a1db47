"""Policy library: hashed text embeddings, exact top-k retrieval, persistence.

Embeddings are 256-dim signed feature-hash vectors (FNV-1a 64 over lowercase
alphanumeric tokens), so indexing is deterministic across runs, platforms and
processes. Retrieval is an exact full scan; libraries here hold tens of
records and correctness beats speed.
"""
from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CorruptRecord, DuplicateRecord, IoFailure

EMBED_DIM = 256

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1
_TOKEN_RE = re.compile(r"[a-z0-9]+")


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def embed_text(text: str) -> np.ndarray:
    """Signed feature-hash embedding, L2-normalized; empty text -> zero vector."""
    vec = np.zeros(EMBED_DIM, dtype=np.float64)
    for token in _TOKEN_RE.findall(text.lower()):
        h = fnv1a64(token.encode("utf-8"))
        sign = 1.0 if (h >> 63) == 0 else -1.0
        vec[h % EMBED_DIM] += sign
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec


@dataclass
class PlanRecord:
    env_description: str
    plan_text: str
    feedback: str
    success: bool = True
    low_level_params: Optional[dict] = None
    embedding: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        if not self.success:
            raise ValueError("only successful records are stored")
        self.embedding = embed_text(self.env_description)

    def to_json(self) -> dict:
        return {
            "env_description": self.env_description,
            "plan_text": self.plan_text,
            "feedback": self.feedback,
            "success": self.success,
            "low_level_params": self.low_level_params,
        }

    @staticmethod
    def from_json(d: dict) -> "PlanRecord":
        return PlanRecord(
            env_description=d["env_description"],
            plan_text=d["plan_text"],
            feedback=d["feedback"],
            success=d["success"],
            low_level_params=d.get("low_level_params"),
        )


class LibraryIndex:
    """Insertion-ordered record store; many readers, one serialized writer."""

    def __init__(self):
        self._records: list[PlanRecord] = []
        self._keys: set[tuple[str, str]] = set()
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._records)

    def records(self) -> list[PlanRecord]:
        with self._lock:
            return list(self._records)

    def store(self, record: PlanRecord) -> int:
        """Append; returns the record's insertion index."""
        key = (record.env_description, record.plan_text)
        with self._lock:
            if key in self._keys:
                raise DuplicateRecord("record already stored")
            self._keys.add(key)
            self._records.append(record)
            return len(self._records) - 1

    def retrieve(self, query_text: str, k: int) -> list[tuple[PlanRecord, float]]:
        """Exact top-k by cosine similarity; ties keep older insertions first."""
        if k < 1:
            raise ValueError("k must be >= 1")
        with self._lock:
            records = list(self._records)
        if not records:
            return []
        q = embed_text(query_text)
        scores = [float(q @ r.embedding) for r in records]
        order = sorted(range(len(records)), key=lambda i: (-scores[i], i))
        return [(records[i], scores[i]) for i in order[:k]]

    # -- persistence -----------------------------------------------------

    def save(self, path: str) -> None:
        try:
            with open(path, "w", encoding="utf-8") as f:
                for rec in self.records():
                    f.write(json.dumps(rec.to_json()) + "\n")
        except OSError as e:
            raise IoFailure(f"cannot write library to {path}: {e}") from None

    @staticmethod
    def load(path: str) -> "LibraryIndex":
        index = LibraryIndex()
        try:
            with open(path, "r", encoding="utf-8") as f:
                lines = f.readlines()
        except OSError as e:
            raise IoFailure(f"cannot read library from {path}: {e}") from None
        for line_no, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                rec = PlanRecord.from_json(d)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise CorruptRecord(line_no, str(e)) from None
            index.store(rec)
        return index


# -- module-level operation surface ------------------------------------------

def store(index: LibraryIndex, record: PlanRecord) -> int:
    return index.store(record)


def retrieve(index: LibraryIndex, query_text: str, k: int):
    return index.retrieve(query_text, k)


def save(index: LibraryIndex, path: str) -> None:
    index.save(path)


def load(path: str) -> LibraryIndex:
    return LibraryIndex.load(path)
