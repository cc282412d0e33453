"""Hard-negative mining and training-triplet assembly."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .io import iter_jsonl, require_fields, write_jsonl
from .qagen import QAPair
from .retrieve import Index

logger = logging.getLogger(__name__)

DEFAULT_NEGATIVES = 10


@dataclass(frozen=True)
class TrainingTriplet:
    qid: str
    query: str
    positive_id: str
    negative_ids: tuple[str, ...]

    def __post_init__(self):
        if self.positive_id in self.negative_ids:
            raise ValueError(f"{self.qid}: positive context listed as a negative")
        if len(set(self.negative_ids)) != len(self.negative_ids):
            raise ValueError(f"{self.qid}: duplicate negatives")

    def to_record(self) -> dict:
        return {
            "qid": self.qid,
            "query": self.query,
            "positive_id": self.positive_id,
            "negative_ids": list(self.negative_ids),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "TrainingTriplet":
        require_fields(rec, ("qid", "query", "positive_id", "negative_ids"), "triplet record")
        return cls(rec["qid"], rec["query"], rec["positive_id"], tuple(rec["negative_ids"]))


def mine_negatives(query, index: Index, gold_id: str, n: int = DEFAULT_NEGATIVES) -> list[str]:
    """Top-``n`` contexts for ``query`` across the whole index, skipping the
    gold context and any context whose text is byte-identical to it."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if gold_id not in index.contexts:
        raise KeyError(f"gold context {gold_id!r} not in index")
    if len(index) <= 1:
        logger.warning("index has %d context(s); no negatives can be mined for %s", len(index), gold_id)
        return []
    gold_text = index.texts.get(gold_id) if index.texts else None
    scores = index.scores(query)
    out = []
    for i in index.order(scores):
        cid = index.ids[i]
        if cid == gold_id:
            continue
        if gold_text is not None and index.texts.get(cid) == gold_text:
            continue
        out.append(cid)
        if len(out) == n:
            break
    return out


@dataclass
class MiningReport:
    triplets: list[TrainingTriplet]
    per_document: Counter = field(default_factory=Counter)
    skipped: list[str] = field(default_factory=list)  # qids whose gold context is unknown


def assemble_triplets(
    qa_pairs: Sequence[QAPair],
    index: Index,
    n: int = DEFAULT_NEGATIVES,
    doc_of: Mapping[str, str] | None = None,
) -> MiningReport:
    """One triplet per resolvable QA pair, queried by the pair's qid in
    ``index.queries``. Pairs whose gold context is missing from the index are
    skipped and listed in the report."""
    report = MiningReport([])
    for pair in qa_pairs:
        if pair.gold_chunk_id not in index.contexts:
            logger.warning("qa %s: gold context %s not found; skipped", pair.qid, pair.gold_chunk_id)
            report.skipped.append(pair.qid)
            continue
        negs = mine_negatives(pair.qid, index, pair.gold_chunk_id, n)
        report.triplets.append(TrainingTriplet(pair.qid, pair.question, pair.gold_chunk_id, tuple(negs)))
        doc = doc_of.get(pair.gold_chunk_id) if doc_of else pair.gold_chunk_id.rsplit(":", 1)[0]
        report.per_document[doc] += 1
    return report


def write_triplets(path: str | Path, triplets: Iterable[TrainingTriplet]) -> int:
    return write_jsonl(path, (t.to_record() for t in triplets))


def read_triplets(path: str | Path) -> list[TrainingTriplet]:
    return [TrainingTriplet.from_record(r) for r in iter_jsonl(path)]


def dataset_statistics(documents: int, agencies: int | None, chunks: int, pairs: int, triplets: Sequence[TrainingTriplet]) -> dict:
    """Summary row in the layout of a synthetic-data statistics table."""
    return {
        "documents": documents,
        "agencies": agencies,
        "chunks": chunks,
        "pairs": pairs,
        "triplets": len(triplets),
        "negatives": sum(len(t.negative_ids) for t in triplets),
    }
