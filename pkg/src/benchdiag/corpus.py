"""Document ingestion: final-version filtering, cleaning, sentence splitting,
token-bounded chunking and per-document sampling."""

from __future__ import annotations

import hashlib
import logging
import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .io import iter_jsonl, require_fields, write_jsonl

logger = logging.getLogger(__name__)

INCLUDE_PHRASES = ("final eis", "final volume", "final vol")
EXCLUDE_PHRASES = ("appendix", "executive summary", "comment")

DEFAULT_MAX_TOKENS = 256
DEFAULT_SAMPLE_FRACTION = 0.3
HEADER_MIN_PAGES = 3
TEXT_SUFFIXES = (".txt", ".md")


# --------------------------------------------------------------------------- tokenizers


class Tokenizer(Protocol):
    def count(self, text: str) -> int: ...

    def truncate(self, text: str, max_tokens: int) -> str: ...


class RegexTokenizer:
    """Tokens are the matches of ``pattern``; truncation keeps the original text
    up to the end of the last retained token."""

    def __init__(self, pattern: str = r"\S+", name: str | None = None):
        self.pattern = re.compile(pattern)
        self.name = name or f"regex:{pattern}"

    def tokens(self, text: str) -> list[str]:
        return self.pattern.findall(text)

    def count(self, text: str) -> int:
        return sum(1 for _ in self.pattern.finditer(text))

    def truncate(self, text: str, max_tokens: int) -> str:
        if max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        for i, m in enumerate(self.pattern.finditer(text), start=1):
            if i == max_tokens:
                return text[:m.end()]
        return text


class WhitespaceTokenizer(RegexTokenizer):
    def __init__(self):
        super().__init__(r"\S+", name="whitespace")


def get_tokenizer(name: str = "whitespace") -> Tokenizer:
    """Resolve a tokenizer spec: ``whitespace``, ``wordpunct`` or ``regex:<pattern>``."""
    if name == "whitespace":
        return WhitespaceTokenizer()
    if name == "wordpunct":
        return RegexTokenizer(r"\w+|[^\w\s]", name="wordpunct")
    if name.startswith("regex:"):
        return RegexTokenizer(name[len("regex:"):])
    raise ValueError(f"unknown tokenizer {name!r}")


# --------------------------------------------------------------------------- types


@dataclass(frozen=True)
class SourceDocument:
    doc_id: str
    filename: str
    raw_text: str
    agency: str | None = None
    skipped: bool = False

    def __post_init__(self):
        if not self.raw_text and not self.skipped:
            raise ValueError(f"document {self.doc_id!r} has empty text but is not flagged as skipped")


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    seq: int
    text: str
    n_tokens: int
    # Source sentences; kept in memory only, not serialized.
    sentences: tuple[str, ...] = field(default=(), compare=False, repr=False)

    def to_record(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "doc_id": self.doc_id,
            "seq": self.seq,
            "text": self.text,
            "n_tokens": self.n_tokens,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Chunk":
        require_fields(rec, ("chunk_id", "doc_id", "seq", "text", "n_tokens"), "chunk record")
        return cls(rec["chunk_id"], rec["doc_id"], int(rec["seq"]), rec["text"], int(rec["n_tokens"]))


def make_chunk_id(doc_id: str, seq: int) -> str:
    return f"{doc_id}:{seq:05d}"


# --------------------------------------------------------------------------- filtering


def filter_final_documents(filenames: Iterable[str]) -> list[str]:
    """Keep filenames naming a final EIS volume, dropping appendices, executive
    summaries and comment files. Matching is case-insensitive on the name."""
    kept = []
    for name in filenames:
        low = name.lower()
        if any(p in low for p in INCLUDE_PHRASES) and not any(p in low for p in EXCLUDE_PHRASES):
            kept.append(name)
    return kept


# --------------------------------------------------------------------------- cleaning

_PAGE_NUMBER_RE = re.compile(
    r"^\s*(?:page\s+)?[-–—]?\s*\d{1,5}\s*[-–—]?\s*(?:of\s+\d{1,5})?\s*$",
    re.IGNORECASE,
)
_DIGITS_RE = re.compile(r"\d+")
_BLANK_RUN_RE = re.compile(r"\n{3,}")
_KEEP_CONTROL = {"\n", "\t", "\f"}


def _line_signature(line: str) -> str:
    # Page-numbered headers ("Final EIS - 12") differ only in digits.
    return _DIGITS_RE.sub("#", " ".join(line.split()))


def _margin_lines(lines: list[str], margin: int) -> list[str]:
    nonblank = [ln for ln in lines if ln.strip()]
    return nonblank[:margin] + nonblank[-margin:]


def clean_text(raw: str, min_pages: int = HEADER_MIN_PAGES, margin: int = 1) -> str:
    """Remove page furniture from extracted text.

    Pages are delimited by form feeds. A line found among the first or last
    ``margin`` non-blank lines of at least ``min_pages`` pages (digits ignored)
    is a running header/footer and is dropped everywhere. Standalone page
    numbers and control characters are removed, trailing whitespace stripped
    and blank-line runs collapsed. The function is idempotent.
    """
    text = raw.replace("\r\n", "\n").replace("\r", "\n")
    text = "".join(
        ch for ch in text if ch in _KEEP_CONTROL or unicodedata.category(ch) != "Cc"
    )
    pages = [p.split("\n") for p in text.split("\f")]

    repeated: set[str] = set()
    if len(pages) >= min_pages:
        page_counts: Counter[str] = Counter()
        for lines in pages:
            page_counts.update({_line_signature(ln) for ln in _margin_lines(lines, margin)})
        repeated = {sig for sig, c in page_counts.items() if c >= min_pages and sig}

    out = []
    for lines in pages:
        for ln in lines:
            if repeated and ln.strip() and _line_signature(ln) in repeated:
                continue
            if _PAGE_NUMBER_RE.match(ln):
                continue
            out.append(ln.rstrip().replace("\t", " "))
    cleaned = _BLANK_RUN_RE.sub("\n\n", "\n".join(out))
    return cleaned.strip("\n")


# --------------------------------------------------------------------------- sentences

ABBREVIATIONS = frozenset(
    """
    mr mrs ms dr prof sr jr st mt ft vs etc al no nos fig figs vol vols sec secs ch
    approx est inc corp co ltd dept gov univ assn jan feb mar apr jun jul aug sep sept
    oct nov dec e.g i.e cf viz u.s u.k a.m p.m
    """.split()
)
_CLOSERS = "\"')]}”’»"
_PARAGRAPH_RE = re.compile(r"\n\s*\n")
_INITIALISM_RE = re.compile(r"^(?:[A-Za-z]\.){2,}$")


def _ends_sentence(token: str, following: str | None) -> bool:
    core = token.rstrip(_CLOSERS)
    if not core or core[-1] not in ".!?":
        return False
    if following is None:
        return True
    if core[-1] == "." and not core.endswith(".."):
        stem = core[:-1].lstrip("(\"'“").lower()
        if stem in ABBREVIATIONS or _INITIALISM_RE.match(core):
            return False
    return not following[0].islower()


def split_sentences(text: str) -> list[str]:
    """Split at terminal punctuation followed by a non-lowercase token, and at
    paragraph breaks. Known abbreviations do not end a sentence.

    Sentences are whitespace-normalized, so ``" ".join(result)`` equals
    ``" ".join(text.split())``.
    """
    sentences: list[str] = []
    for para in _PARAGRAPH_RE.split(text):
        tokens = para.split()
        current: list[str] = []
        for i, tok in enumerate(tokens):
            current.append(tok)
            nxt = tokens[i + 1] if i + 1 < len(tokens) else None
            if _ends_sentence(tok, nxt):
                sentences.append(" ".join(current))
                current = []
        if current:
            sentences.append(" ".join(current))
    return sentences


# --------------------------------------------------------------------------- chunking


def chunk_sentences(
    sentences: Sequence[str],
    max_tokens: int = DEFAULT_MAX_TOKENS,
    doc_id: str = "doc",
    tokenizer: Tokenizer | None = None,
) -> list[Chunk]:
    """Greedy sentence packing: keep appending while the running token count
    stays within ``max_tokens``. A sentence that alone exceeds the budget
    becomes its own chunk rather than being split."""
    if max_tokens < 1:
        raise ValueError("max_tokens must be >= 1")
    tokenizer = tokenizer or WhitespaceTokenizer()
    chunks: list[Chunk] = []
    buf: list[str] = []
    buf_tokens = 0

    def flush():
        nonlocal buf, buf_tokens
        if buf:
            seq = len(chunks)
            chunks.append(
                Chunk(make_chunk_id(doc_id, seq), doc_id, seq, " ".join(buf), buf_tokens, tuple(buf))
            )
        buf, buf_tokens = [], 0

    for sent in sentences:
        n = tokenizer.count(sent)
        if n == 0:
            continue
        if buf and buf_tokens + n > max_tokens:
            flush()
        buf.append(sent)
        buf_tokens += n
    flush()
    return chunks


def chunk_document(
    doc: SourceDocument, max_tokens: int = DEFAULT_MAX_TOKENS, tokenizer: Tokenizer | None = None
) -> list[Chunk]:
    if doc.skipped:
        return []
    return chunk_sentences(split_sentences(clean_text(doc.raw_text)), max_tokens, doc.doc_id, tokenizer)


def _doc_stream_seed(seed: int, doc_id: str) -> list[int]:
    digest = hashlib.blake2b(doc_id.encode("utf-8"), digest_size=8).digest()
    return [int(seed), int.from_bytes(digest, "little")]


def sample_size(n: int, fraction: float) -> int:
    # Decimal semantics: 0.3 * 10 is 3.0000000000000004 in binary floating point.
    return min(n, math.ceil(Fraction(str(fraction)) * n))


def sample_chunks(chunks: Sequence[Chunk], fraction: float = DEFAULT_SAMPLE_FRACTION, seed: int = 0) -> list[Chunk]:
    """Draw ``ceil(fraction * n)`` chunks per document without replacement.

    Each document gets its own generator derived from ``(seed, doc_id)`` so the
    selection for one document does not depend on the others. Output keeps
    document first-appearance order and the original chunk order within a
    document.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    by_doc: dict[str, list[Chunk]] = {}
    for ch in chunks:
        by_doc.setdefault(ch.doc_id, []).append(ch)

    selected: list[Chunk] = []
    for doc_id, doc_chunks in by_doc.items():
        n = len(doc_chunks)
        m = sample_size(n, fraction)
        if m == n:
            selected.extend(doc_chunks)
            continue
        rng = np.random.default_rng(_doc_stream_seed(seed, doc_id))
        picks = np.sort(rng.choice(n, size=m, replace=False))
        selected.extend(doc_chunks[i] for i in picks)
    return selected


# --------------------------------------------------------------------------- files


def load_corpus(root: str | Path, filter_final: bool = True) -> list[SourceDocument]:
    """Read pre-extracted text files under ``root`` (recursively, sorted by path)."""
    root = Path(root)
    if root.is_file():
        paths = [root]
        root = root.parent
    else:
        paths = sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in TEXT_SUFFIXES)
    if filter_final:
        keep = set(filter_final_documents(p.name for p in paths))
        dropped = [p for p in paths if p.name not in keep]
        if dropped:
            logger.info("filtered out %d non-final files", len(dropped))
        paths = [p for p in paths if p.name in keep]
    docs = []
    for p in paths:
        raw = p.read_text(encoding="utf-8", errors="replace")
        doc_id = p.relative_to(root).with_suffix("").as_posix()
        if not raw.strip():
            logger.warning("skipping empty document %s", doc_id)
        docs.append(SourceDocument(doc_id, p.name, raw, skipped=not raw.strip()))
    return docs


def write_chunks(path: str | Path, chunks: Iterable[Chunk]) -> int:
    return write_jsonl(path, (c.to_record() for c in chunks))


def read_chunks(path: str | Path) -> list[Chunk]:
    return [Chunk.from_record(r) for r in iter_jsonl(path)]
