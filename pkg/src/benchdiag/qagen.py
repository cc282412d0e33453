"""Synthetic question generation through an external text-generation service."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import httpx

from .corpus import Chunk
from .io import iter_jsonl, require_fields, write_jsonl

logger = logging.getLogger(__name__)

TOKEN_ENV_VAR = "BENCHDIAG_API_TOKEN"


class QuestionType(str, enum.Enum):
    INFERENCE = "inference"
    CLOSED_ENDED = "closed-ended"
    COMPARISON = "comparison"
    PROCESS = "process"
    DIVERGENT = "divergent"
    EVALUATION = "evaluation"
    UNSPECIFIED = "unspecified"

    @classmethod
    def parse(cls, value: str | None) -> "QuestionType | None":
        """Map free-form labels ("Closed ended", "closed_ended") onto the enum.
        Returns None for unknown labels."""
        if value is None:
            return None
        key = re.sub(r"[\s_]+", "-", str(value).strip().lower())
        for member in cls:
            if member.value == key:
                return member
        return None


BENCHMARK_TYPES = tuple(t for t in QuestionType if t is not QuestionType.UNSPECIFIED)


@dataclass(frozen=True)
class QAPair:
    qid: str
    question: str
    answer: str
    gold_chunk_id: str
    qtype: QuestionType = QuestionType.UNSPECIFIED

    def __post_init__(self):
        if not self.question.strip() or not self.answer.strip():
            raise ValueError(f"QA pair {self.qid!r} has an empty question or answer")

    def to_record(self) -> dict:
        return {
            "qid": self.qid,
            "question": self.question,
            "answer": self.answer,
            "gold_chunk_id": self.gold_chunk_id,
            "qtype": self.qtype.value,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "QAPair":
        require_fields(rec, ("qid", "question", "answer", "gold_chunk_id"), "qa record")
        qtype = QuestionType.parse(rec.get("qtype")) or QuestionType.UNSPECIFIED
        return cls(rec["qid"], rec["question"], rec["answer"], rec["gold_chunk_id"], qtype)


def write_pairs(path, pairs: Iterable[QAPair]) -> int:
    return write_jsonl(path, (p.to_record() for p in pairs))


def read_pairs(path) -> list[QAPair]:
    return [QAPair.from_record(r) for r in iter_jsonl(path)]


# --------------------------------------------------------------------------- prompts

TRAINING_PROMPT = (
    "You are an expert AI assisting in creating a high-quality, diverse synthetic dataset "
    "to train information retrieval models. Analyze the following document chunk and generate "
    "potential queries along with their corresponding answers based on the information present. "
    "If the context does not contain sufficient information, return empty lists.\n"
    "Context: {context}"
)

_TYPE_INSTRUCTIONS = (
    ("Closed-ended", "Questions that can be answered with a simple 'yes' or 'no' based on the information provided in the context."),
    ("Comparison", "Questions that require comparing and contrasting information from the context, involving similarities, differences, or temporal changes."),
    ("Divergent", "Open-ended questions that require using information from the context to extrapolate, infer, or explore possibilities."),
    ("Evaluation", "Questions that ask for an assessment or judgment based on the information in the context."),
    ("Inference", "Questions that require reading between the lines and drawing conclusions based on the information provided."),
    ("Process", "Questions that ask about how something works or the steps involved in a process described in the context."),
)

BENCHMARK_PROMPT = (
    "You are an advanced AI system with expertise in natural language processing and question "
    "generation. Your task is to assist in creating a high-quality, diverse synthetic dataset for "
    "training information retrieval models.\n\n"
    "Given the entire report below, perform the following steps:\n"
    "1. Carefully read and analyze the report to understand its content, main ideas, and key details.\n"
    "2. Generate thought-provoking questions based on the content of the report, along with their "
    "corresponding contexts. For each pair:\n"
    "   - Select a relevant context from the report that is 3-4 lines long and provides a "
    "comprehensive picture to answer the question without requiring external knowledge.\n"
    "   - Generate a question that is directly relevant to the selected context.\n"
    "   - The question should cover one of the following types:\n"
    + "".join(f"     - {name}: {text}\n" for name, text in _TYPE_INSTRUCTIONS)
    + "   - Ensure that each question is concise, clear, and grammatically correct.\n"
    "   - Confirm that the selected context contains all the necessary details to answer the "
    "generated question. The answer should be directly derivable from the given context without "
    "requiring external knowledge.\n"
    "3. Provide the generated question-context pairs.\n\n"
    "Remember: The goal is to create a diverse set of challenging questions that effectively test "
    "the model's ability to retrieve and understand relevant information from the given report. "
    "Maintain high-quality standards throughout the dataset generation process.\n\n"
    "Report:\n{report}"
)


def build_training_prompt(chunk: Chunk | str) -> str:
    text = chunk.text if isinstance(chunk, Chunk) else chunk
    if not text.strip():
        raise ValueError("chunk text is empty")
    # str.replace, not format: chunk text may contain braces.
    return TRAINING_PROMPT.replace("{context}", text)


def build_benchmark_prompt(report_text: str) -> str:
    if not report_text.strip():
        raise ValueError("report text is empty")
    return BENCHMARK_PROMPT.replace("{report}", report_text)


def prompt_context(prompt: str) -> str | None:
    """Recover the substituted chunk text from a training prompt."""
    head, sep, tail = prompt.partition("\nContext: ")
    return tail if sep else None


# --------------------------------------------------------------------------- parsing


class ResponseStatus(str, enum.Enum):
    OK = "ok"
    EMPTY = "empty"
    TRANSPORT_ERROR = "transport_error"
    PARSE_ERROR = "parse_error"


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    max_attempts: int = 3
    timeout_ms: int = 60_000
    max_output_tokens: int = 2048

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


@dataclass(frozen=True)
class GenerationResponse:
    raw_text: str
    status: ResponseStatus
    error: str | None = None
    attempts: int = 1


_FENCE_RE = re.compile(r"```(?:json|JSON)?\s*(.*?)```", re.DOTALL)
_QUESTION_KEYS = ("question", "query", "q")
_ANSWER_KEYS = ("answer", "context", "a")
_TYPE_KEYS = ("type", "qtype", "question_type")


def _candidates(text: str) -> list[str]:
    out = [m.group(1) for m in _FENCE_RE.finditer(text)]
    out.append(text)
    return out


def _decode_first_json(text: str):
    """Decode the first JSON array or object embedded in ``text``."""
    decoder = json.JSONDecoder()
    for i, ch in enumerate(text):
        if ch not in "[{":
            continue
        try:
            value, _ = decoder.raw_decode(text, i)
        except json.JSONDecodeError:
            continue
        return value
    raise ParseError("no JSON value found")


def _first(obj: dict, keys: Sequence[str]):
    lowered = {str(k).lower(): v for k, v in obj.items()}
    for k in keys:
        if k in lowered:
            return lowered[k]
    return None


def _items(value) -> list | None:
    if isinstance(value, list):
        return value
    if isinstance(value, dict):
        # {"queries": [...], "answers": [...]} as parallel lists
        qs = _first(value, ("queries", "questions"))
        ans = _first(value, ("answers", "contexts"))
        if isinstance(qs, list) and isinstance(ans, list):
            return [{"question": q, "answer": a} for q, a in zip(qs, ans)]
        for v in value.values():
            if isinstance(v, list):
                return v
        if _first(value, _QUESTION_KEYS) is not None:
            return [value]
    return None


def parse_response(raw_text: str) -> list[tuple[str, str, QuestionType | None]]:
    """Extract ``(question, answer, qtype)`` triples from model output.

    Accepts a JSON array of objects, optionally wrapped in a code fence or
    surrounded by prose, and the parallel-lists form ``{"queries": [...],
    "answers": [...]}``. Items lacking a non-empty question or answer are
    dropped. Raises ParseError when the text is non-empty but nothing
    well-formed can be extracted.
    """
    text = raw_text.strip()
    if not text:
        return []
    for cand in _candidates(text):
        try:
            value = _decode_first_json(cand)
        except ParseError:
            continue
        items = _items(value)
        if items is None:
            continue
        if not items:
            return []
        pairs = []
        for item in items:
            if not isinstance(item, dict):
                continue
            q, a = _first(item, _QUESTION_KEYS), _first(item, _ANSWER_KEYS)
            if not isinstance(q, str) or not isinstance(a, str) or not q.strip() or not a.strip():
                continue
            t = _first(item, _TYPE_KEYS)
            pairs.append((q.strip(), a.strip(), QuestionType.parse(t) if isinstance(t, str) else None))
        if pairs:
            return pairs
        # Every item was malformed; keep looking in other candidates
        # (e.g. a fenced block after a prose example).
    raise ParseError("no well-formed question/answer pair in response")


# --------------------------------------------------------------------------- clients


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_base: float = 0.5
    backoff_max: float = 8.0
    timeout_ms: int = 60_000

    def delay(self, attempt: int) -> float:
        """Sleep before retry number ``attempt`` (1-based)."""
        return min(self.backoff_max, self.backoff_base * 2 ** (attempt - 1))


class GenerationClient(Protocol):
    def generate(self, request: GenerationRequest, policy: RetryPolicy | None = None) -> GenerationResponse: ...


class TransportError(RuntimeError):
    pass


class HttpGenerationClient:
    """POSTs ``{"prompt", "max_output_tokens"}`` and expects ``{"text"}`` back.

    The bearer token, when present, comes from ``$BENCHDIAG_API_TOKEN`` (or
    the variable named by ``token_env``). Pass ``transport`` to route
    requests elsewhere, e.g. :class:`DirectoryTransport`.
    """

    def __init__(
        self,
        base_url: str,
        token_env: str = TOKEN_ENV_VAR,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        headers = {}
        token = os.environ.get(token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self._client = httpx.Client(headers=headers, transport=transport)
        self._sleep = sleep

    def close(self):
        self._client.close()

    def _post(self, request: GenerationRequest) -> str:
        try:
            resp = self._client.post(
                self.base_url,
                json={"prompt": request.prompt, "max_output_tokens": request.max_output_tokens},
                timeout=request.timeout_ms / 1000,
            )
            resp.raise_for_status()
            body = resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise TransportError(str(exc)) from exc
        text = body.get("text") if isinstance(body, dict) else None
        if not isinstance(text, str):
            raise TransportError("response body has no 'text' field")
        return text

    def generate(self, request: GenerationRequest, policy: RetryPolicy | None = None) -> GenerationResponse:
        """Send ``request``, retrying transport failures with exponential backoff
        taken from ``policy``; attempts are capped by ``request.max_attempts``."""
        policy = policy or RetryPolicy()
        last_error = None
        for attempt in range(1, request.max_attempts + 1):
            try:
                text = self._post(request)
            except TransportError as exc:
                last_error = str(exc)
                logger.debug("generation attempt %d failed: %s", attempt, exc)
                if attempt < request.max_attempts:
                    self._sleep(policy.delay(attempt))
                continue
            status = ResponseStatus.OK if text.strip() else ResponseStatus.EMPTY
            return GenerationResponse(text, status, attempts=attempt)
        return GenerationResponse("", ResponseStatus.TRANSPORT_ERROR, last_error, attempts=request.max_attempts)


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


class DirectoryTransport(httpx.BaseTransport):
    """Serves canned generation responses from a directory.

    The reply to a prompt is read from ``<sha256(prompt)[:16]>.txt``, falling
    back to ``default.txt``. With neither present the transport answers 404,
    which the client treats as a transport failure.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        payload = json.loads(request.content or b"{}")
        prompt = payload.get("prompt", "")
        for name in (f"{prompt_digest(prompt)}.txt", "default.txt"):
            path = self.directory / name
            if path.is_file():
                return httpx.Response(200, json={"text": path.read_text(encoding="utf-8")})
        return httpx.Response(404, json={"error": "no canned response"})


class FunctionTransport(httpx.BaseTransport):
    """Answers each request with ``fn(prompt)``; a stand-in service for offline runs."""

    def __init__(self, fn: Callable[[str], str]):
        self.fn = fn

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        payload = json.loads(request.content or b"{}")
        return httpx.Response(200, json={"text": self.fn(payload.get("prompt", ""))})


# --------------------------------------------------------------------------- pipeline


@dataclass
class GenerationFailure:
    chunk_id: str
    status: ResponseStatus
    detail: str | None

    def to_record(self) -> dict:
        return {"chunk_id": self.chunk_id, "status": self.status.value, "detail": self.detail}


@dataclass
class GenerationResult:
    pairs: list[QAPair]
    failures: list[GenerationFailure] = field(default_factory=list)
    dropped: int = 0  # parsed items rejected (missing type in benchmark mode, duplicates)


def _qid(chunk_id: str, j: int) -> str:
    return f"{chunk_id}#q{j}"


def generate_pairs(
    chunks: Sequence[Chunk],
    client: GenerationClient,
    retry_policy: RetryPolicy | None = None,
    mode: str = "training",
    concurrency: int = 4,
    dedupe: bool = False,
) -> GenerationResult:
    """Ask the service for question/answer pairs, one request per chunk.

    Each pair's ``gold_chunk_id`` is the chunk whose prompt produced it.
    Transport and parse failures are recorded per chunk and do not abort the
    run. In ``benchmark`` mode the prompt is the report-level template and
    pairs without one of the six question types are dropped.
    """
    if mode not in ("training", "benchmark"):
        raise ValueError(f"unknown mode {mode!r}")
    policy = retry_policy or RetryPolicy()
    build = build_training_prompt if mode == "training" else (lambda c: build_benchmark_prompt(c.text))

    def one(chunk: Chunk) -> GenerationResponse:
        req = GenerationRequest(build(chunk), max_attempts=policy.max_attempts, timeout_ms=policy.timeout_ms)
        return client.generate(req, policy)

    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        responses = list(pool.map(one, chunks))

    result = GenerationResult([])
    seen: set[str] = set()
    for chunk, resp in zip(chunks, responses):
        if resp.status is ResponseStatus.TRANSPORT_ERROR:
            logger.warning("chunk %s skipped after %d attempts: %s", chunk.chunk_id, resp.attempts, resp.error)
            result.failures.append(GenerationFailure(chunk.chunk_id, resp.status, resp.error))
            continue
        if resp.status is ResponseStatus.EMPTY:
            continue
        try:
            parsed = parse_response(resp.raw_text)
        except ParseError as exc:
            logger.warning("chunk %s: unparseable response", chunk.chunk_id)
            result.failures.append(GenerationFailure(chunk.chunk_id, ResponseStatus.PARSE_ERROR, str(exc)))
            continue
        j = 0
        for question, answer, qtype in parsed:
            if mode == "benchmark" and qtype not in BENCHMARK_TYPES:
                result.dropped += 1
                continue
            if dedupe:
                key = " ".join(question.lower().split())
                if key in seen:
                    result.dropped += 1
                    continue
                seen.add(key)
            result.pairs.append(
                QAPair(_qid(chunk.chunk_id, j), question, answer, chunk.chunk_id, qtype or QuestionType.UNSPECIFIED)
            )
            j += 1
    return result


def question_type_counts(pairs: Iterable[QAPair]) -> dict[str, int]:
    counts = {t.value: 0 for t in QuestionType}
    for p in pairs:
        counts[p.qtype.value] += 1
    return counts
