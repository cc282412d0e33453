"""Exact brute-force scoring and ranking of contexts."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .embed import EmbeddingSet
from .io import DataFormatError, iter_jsonl, write_jsonl


class ScoringMode(str, enum.Enum):
    COSINE = "cosine"
    MAXSIM = "maxsim"


def cosine_score(q, d) -> float:
    """Dot product of two unit vectors."""
    q = np.asarray(q, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if q.shape != d.shape or q.ndim != 1:
        raise ValueError(f"dimension mismatch: {q.shape} vs {d.shape}")
    return float(q @ d)


def maxsim_score(Q, D) -> float:
    """Late-interaction score: for every query token row take the best dot
    product against the document's token rows, then sum over query rows."""
    Q = np.asarray(Q, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    if Q.ndim != 2 or D.ndim != 2 or Q.shape[0] == 0 or D.shape[0] == 0:
        raise ValueError("maxsim needs non-empty 2-D token matrices")
    if Q.shape[1] != D.shape[1]:
        raise ValueError(f"dimension mismatch: {Q.shape[1]} vs {D.shape[1]}")
    return float((Q @ D.T).max(axis=1).sum())


@dataclass(frozen=True)
class RankedList:
    qid: str
    entries: tuple[tuple[str, float], ...]

    @property
    def ids(self) -> list[str]:
        return [cid for cid, _ in self.entries]

    def position(self, context_id: str) -> int | None:
        """1-based rank of ``context_id``, or None when absent."""
        for i, (cid, _) in enumerate(self.entries, start=1):
            if cid == context_id:
                return i
        return None

    def to_record(self) -> dict:
        return {"qid": self.qid, "ranked": [{"id": cid, "score": s} for cid, s in self.entries]}

    @classmethod
    def from_record(cls, rec: dict) -> "RankedList":
        if "qid" not in rec or "ranked" not in rec:
            raise DataFormatError("ranking record needs 'qid' and 'ranked'")
        return cls(rec["qid"], tuple((e["id"], float(e["score"])) for e in rec["ranked"]))


class Index:
    """Contexts (and optionally the queries to rank against them) in one
    immutable bundle. ``texts`` is optional and only used by the miner."""

    def __init__(
        self,
        contexts: EmbeddingSet,
        mode: ScoringMode | str = ScoringMode.COSINE,
        queries: EmbeddingSet | None = None,
        texts: Mapping[str, str] | None = None,
    ):
        self.mode = ScoringMode(mode)
        self.contexts = contexts
        self.queries = queries
        self.ids: tuple[str, ...] = contexts.ids
        self.texts = dict(texts) if texts is not None else None
        if self.mode is ScoringMode.MAXSIM:
            missing = [k for k in self.ids if contexts.tokens is None or k not in contexts.tokens]
            if missing:
                raise ValueError(f"maxsim index needs token matrices; missing for {missing[:3]}")
        # id order used for tie-breaking: position in lexicographic order
        order = sorted(range(len(self.ids)), key=lambda i: self.ids[i])
        self._lex_rank = np.empty(len(self.ids), dtype=np.int64)
        self._lex_rank[order] = np.arange(len(self.ids))

    def __len__(self) -> int:
        return len(self.ids)

    def _query_repr(self, query):
        if isinstance(query, str):
            if self.queries is None or query not in self.queries:
                raise KeyError(f"unknown query id {query!r}")
            if self.mode is ScoringMode.MAXSIM:
                return self.queries.token_matrix(query)
            return self.queries[query]
        return np.asarray(query)

    def scores(self, query) -> np.ndarray:
        """Score every context against ``query`` (an id in ``queries`` or a
        raw vector / token matrix)."""
        q = np.asarray(self._query_repr(query), dtype=np.float64)
        if self.mode is ScoringMode.COSINE:
            if q.ndim != 1 or q.shape[0] != self.contexts.dim:
                raise ValueError("query vector dimension does not match the index")
            return self.contexts.matrix.astype(np.float64) @ q
        return np.array([maxsim_score(q, self.contexts.token_matrix(k)) for k in self.ids])

    def order(self, scores: np.ndarray) -> np.ndarray:
        """Indices sorted by descending score, ties by ascending context id."""
        return np.lexsort((self._lex_rank, -scores))


def rank(query, index: Index, k: int | None = None, qid: str | None = None) -> RankedList:
    """Exact top-``k`` contexts for ``query``; ``k`` larger than the corpus is
    clamped, ``None`` ranks everything."""
    if k is not None and k < 1:
        raise ValueError("k must be >= 1")
    scores = index.scores(query)
    order = index.order(scores)
    if k is not None:
        order = order[:k]
    if qid is None:
        qid = query if isinstance(query, str) else ""
    return RankedList(qid, tuple((index.ids[i], float(scores[i])) for i in order))


def rank_all(index: Index, k: int | None = None, query_ids: Sequence[str] | None = None) -> list[RankedList]:
    if index.queries is None:
        raise ValueError("index has no query embeddings")
    query_ids = list(index.queries.ids if query_ids is None else query_ids)
    return [rank(q, index, k) for q in query_ids]


def write_rankings(path: str | Path, rankings: Iterable[RankedList]) -> int:
    return write_jsonl(path, (r.to_record() for r in rankings))


def read_rankings(path: str | Path) -> list[RankedList]:
    return [RankedList.from_record(r) for r in iter_jsonl(path)]
