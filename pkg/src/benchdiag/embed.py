"""Embedding sets: storage formats, pooling, and provider clients."""

from __future__ import annotations

import hashlib
import logging
import os
import re
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Protocol, Sequence

import httpx
import numpy as np

from .corpus import Tokenizer, WhitespaceTokenizer
from .io import DataFormatError, iter_jsonl, write_jsonl

logger = logging.getLogger(__name__)

MAGIC = b"EMB1"
NORM_TOL = 1e-6
DEFAULT_TRUNCATE_AT = 512


class EmbeddingFormatError(DataFormatError):
    pass


def _unit(vec: np.ndarray, what: str) -> np.ndarray:
    v64 = np.asarray(vec, dtype=np.float64)
    if not np.all(np.isfinite(v64)):
        raise EmbeddingFormatError(f"{what}: non-finite value")
    norm = np.linalg.norm(v64)
    if norm == 0.0:
        raise EmbeddingFormatError(f"{what}: zero vector cannot be normalized")
    v32 = v64.astype(np.float32)
    # Already-unit float32 values are kept as-is so save/load round trips are bit-exact.
    if abs(norm - 1.0) <= NORM_TOL and np.array_equal(v32.astype(np.float64), v64):
        return v32
    return (v64 / norm).astype(np.float32)


def _unit_rows(mat: np.ndarray, what: str) -> np.ndarray:
    m = np.asarray(mat, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] == 0:
        raise EmbeddingFormatError(f"{what}: token matrix must be non-empty and 2-D")
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise EmbeddingFormatError(f"{what}: zero token vector")
    return (m / norms).astype(np.float32)


class EmbeddingSet(Mapping[str, np.ndarray]):
    """Immutable id -> unit vector map, with optional per-token matrices.

    Vectors are stored as one read-only float32 matrix in insertion order.
    """

    def __init__(self, ids: Sequence[str], matrix: np.ndarray, tokens: Mapping[str, np.ndarray] | None = None):
        matrix = np.array(matrix, dtype=np.float32)
        if matrix.ndim != 2 or matrix.shape[0] != len(ids):
            raise EmbeddingFormatError("matrix shape does not match ids")
        if len(set(ids)) != len(ids):
            raise EmbeddingFormatError("duplicate ids in embedding set")
        matrix.setflags(write=False)
        self.ids: tuple[str, ...] = tuple(ids)
        self.matrix = matrix
        self._pos = {k: i for i, k in enumerate(self.ids)}
        self.tokens: dict[str, np.ndarray] | None = None
        if tokens is not None:
            self.tokens = {}
            for k, m in tokens.items():
                m = np.array(m, dtype=np.float32)
                if m.ndim != 2 or m.shape[1] != self.dim:
                    raise EmbeddingFormatError(f"{k}: token matrix dimension mismatch")
                m.setflags(write=False)
                self.tokens[k] = m

    @classmethod
    def from_vectors(
        cls,
        items: Iterable[tuple[str, Sequence[float]]] | Mapping[str, Sequence[float]],
        tokens: Mapping[str, np.ndarray] | None = None,
    ) -> "EmbeddingSet":
        """Validate and unit-normalize ``(id, vector)`` pairs. The first vector
        fixes the dimension; a mismatch names the offending id."""
        if isinstance(items, Mapping):
            items = items.items()
        ids, rows, dim = [], [], None
        for key, vec in items:
            vec = np.asarray(vec)
            if vec.ndim != 1:
                raise EmbeddingFormatError(f"{key}: vector must be 1-D")
            if dim is None:
                dim = vec.shape[0]
                if dim == 0:
                    raise EmbeddingFormatError(f"{key}: empty vector")
            elif vec.shape[0] != dim:
                raise EmbeddingFormatError(f"{key}: dimension {vec.shape[0]} != {dim}")
            ids.append(key)
            rows.append(_unit(vec, key))
        matrix = np.stack(rows) if rows else np.zeros((0, 0), dtype=np.float32)
        toks = None
        if tokens is not None:
            toks = {k: _unit_rows(m, k) for k, m in tokens.items()}
        return cls(ids, matrix, toks)

    @classmethod
    def empty(cls, dim: int = 0) -> "EmbeddingSet":
        return cls([], np.zeros((0, dim), dtype=np.float32))

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def __getitem__(self, key: str) -> np.ndarray:
        return self.matrix[self._pos[key]]

    def __iter__(self) -> Iterator[str]:
        return iter(self.ids)

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, key) -> bool:
        return key in self._pos

    def token_matrix(self, key: str) -> np.ndarray:
        if self.tokens is None or key not in self.tokens:
            raise KeyError(f"no token matrix for {key!r}")
        return self.tokens[key]

    def subset(self, ids: Iterable[str]) -> "EmbeddingSet":
        ids = list(ids)
        idx = [self._pos[k] for k in ids]
        toks = None if self.tokens is None else {k: self.tokens[k] for k in ids if k in self.tokens}
        return EmbeddingSet(ids, self.matrix[idx], toks)

    def __eq__(self, other) -> bool:
        """Bitwise equality of ids and pooled vectors."""
        if not isinstance(other, EmbeddingSet):
            return NotImplemented
        return self.ids == other.ids and self.dim == other.dim and self.matrix.tobytes() == other.matrix.tobytes()

    __hash__ = None


# --------------------------------------------------------------------------- formats


def save_text(path: str | Path, emb: EmbeddingSet) -> None:
    def records():
        for k in emb.ids:
            rec = {"id": k, "vector": [float(x) for x in emb[k]]}
            if emb.tokens is not None and k in emb.tokens:
                rec["tokens"] = [[float(x) for x in row] for row in emb.tokens[k]]
            yield rec

    write_jsonl(path, records())


def save_binary(path: str | Path, emb: EmbeddingSet) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", emb.dim, len(emb)))
        for k in emb.ids:
            kb = k.encode("utf-8")
            if len(kb) > 0xFFFF:
                raise EmbeddingFormatError(f"id too long for binary format: {k[:40]}...")
            fh.write(struct.pack("<H", len(kb)))
            fh.write(kb)
            fh.write(emb[k].astype("<f4").tobytes())


TOKENS_MAGIC = b"TOK1"


def tokens_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".tok")


def save_tokens(path: str | Path, emb: EmbeddingSet) -> None:
    """Token matrices in a binary sidecar: ``TOK1``, ``<II`` dim/count, then per
    id a ``<H`` length, the UTF-8 id, ``<I`` row count and ``<f4`` rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    toks = emb.tokens or {}
    with path.open("wb") as fh:
        fh.write(TOKENS_MAGIC)
        fh.write(struct.pack("<II", emb.dim, len(toks)))
        for k in emb.ids:
            if k not in toks:
                continue
            kb = k.encode("utf-8")
            fh.write(struct.pack("<H", len(kb)))
            fh.write(kb)
            fh.write(struct.pack("<I", toks[k].shape[0]))
            fh.write(toks[k].astype("<f4").tobytes())


def load_tokens(path: str | Path) -> tuple[int, dict[str, np.ndarray]]:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != TOKENS_MAGIC or len(data) < 12:
        raise EmbeddingFormatError(f"{path}: not a token sidecar")
    dim, count = struct.unpack_from("<II", data, 4)
    off, out = 12, {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, off)
            key = data[off + 2:off + 2 + n].decode("utf-8")
            off += 2 + n
            (rows,) = struct.unpack_from("<I", data, off)
            off += 4
            out[key] = np.frombuffer(data, dtype="<f4", count=rows * dim, offset=off).reshape(rows, dim).astype(np.float32)
            off += 4 * rows * dim
    except (struct.error, ValueError) as exc:
        raise EmbeddingFormatError(f"{path}: truncated token sidecar") from exc
    if off != len(data):
        raise EmbeddingFormatError(f"{path}: trailing bytes in token sidecar")
    return dim, out


def save_embeddings(path: str | Path, emb: EmbeddingSet) -> None:
    """Binary for ``.emb``/``.bin`` suffixes, line-delimited JSON otherwise.
    In binary mode token matrices, if any, go to a ``.tok`` sidecar."""
    if Path(path).suffix in (".emb", ".bin"):
        save_binary(path, emb)
        side = tokens_path(path)
        if emb.tokens:
            save_tokens(side, emb)
        elif side.exists():
            side.unlink()
    else:
        save_text(path, emb)


def _load_binary(path: Path) -> EmbeddingSet:
    data = path.read_bytes()
    if len(data) < 12:
        raise EmbeddingFormatError(f"{path}: truncated header")
    dim, count = struct.unpack_from("<II", data, 4)
    off = 12
    items = []
    for _ in range(count):
        if off + 2 > len(data):
            raise EmbeddingFormatError(f"{path}: truncated record")
        (n,) = struct.unpack_from("<H", data, off)
        off += 2
        key = data[off:off + n].decode("utf-8")
        off += n
        end = off + 4 * dim
        if end > len(data):
            raise EmbeddingFormatError(f"{path}: truncated vector for {key!r}")
        items.append((key, np.frombuffer(data, dtype="<f4", count=dim, offset=off).astype(np.float32)))
        off = end
    if off != len(data):
        raise EmbeddingFormatError(f"{path}: trailing bytes after {count} records")
    if count == 0:
        return EmbeddingSet.empty(dim)
    return EmbeddingSet.from_vectors(items)


def _load_text(path: Path) -> EmbeddingSet:
    items, tokens = [], {}
    for rec in iter_jsonl(path):
        if "id" not in rec or "vector" not in rec:
            raise EmbeddingFormatError(f"{path}: record missing 'id' or 'vector'")
        items.append((rec["id"], rec["vector"]))
        if "tokens" in rec:
            tokens[rec["id"]] = np.asarray(rec["tokens"], dtype=np.float64)
    emb = EmbeddingSet.from_vectors(items)
    if tokens:
        for k, m in tokens.items():
            if m.ndim != 2 or m.shape[1] != emb.dim:
                raise EmbeddingFormatError(f"{k}: token matrix dimension mismatch")
        emb = EmbeddingSet(emb.ids, emb.matrix, {k: _unit_rows(m, k) for k, m in tokens.items()})
    return emb


def load_embeddings(path: str | Path) -> EmbeddingSet:
    """Load either format (detected by the ``EMB1`` magic) and re-normalize."""
    path = Path(path)
    with path.open("rb") as fh:
        head = fh.read(4)
    if head != MAGIC:
        return _load_text(path)
    emb = _load_binary(path)
    side = tokens_path(path)
    if side.is_file():
        dim, toks = load_tokens(side)
        if toks and dim != emb.dim:
            raise EmbeddingFormatError(f"{side}: dimension {dim} != {emb.dim}")
        emb = EmbeddingSet(emb.ids, emb.matrix, {k: _unit_rows(m, k) for k, m in toks.items()})
    return emb


# --------------------------------------------------------------------------- pooling


def pool_tokens(matrix) -> np.ndarray:
    """Mean of token rows, then unit L2 normalization."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] == 0:
        raise ValueError("cannot pool an empty token matrix")
    mean = m.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        raise ValueError("token mean is the zero vector")
    return mean / norm


# --------------------------------------------------------------------------- providers


class EmbeddingClient(Protocol):
    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        """One array per text: a 1-D pooled vector or a 2-D token matrix."""
        ...


class HashEmbeddingClient:
    """Deterministic offline embedder.

    Every lowercased word maps to a fixed pseudo-random Gaussian vector drawn
    from a generator seeded by ``(seed, hash(word))``; a text yields the matrix
    of its word vectors. Texts sharing vocabulary therefore land close together,
    which is enough structure for pipeline runs without a neural encoder.
    """

    _WORD_RE = re.compile(r"\w+")

    def __init__(self, dim: int = 64, seed: int = 0, pooled_only: bool = False):
        self.dim = dim
        self.seed = seed
        self.pooled_only = pooled_only
        self._vec = lru_cache(maxsize=200_000)(self._word_vector)

    def _word_vector(self, word: str) -> np.ndarray:
        h = int.from_bytes(hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest(), "little")
        return np.random.default_rng([self.seed, h]).standard_normal(self.dim)

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        out = []
        for text in texts:
            words = self._WORD_RE.findall(text.lower()) or ["<empty>"]
            mat = np.stack([self._vec(w) for w in words])
            out.append(pool_tokens(mat) if self.pooled_only else mat)
        return out


class HttpEmbeddingClient:
    """POSTs ``{"texts": [...]}`` and expects ``{"vectors": [[...], ...]}``.

    An optional ``token_vectors`` field (one matrix per text) is used when
    the service returns per-token embeddings.
    """

    def __init__(
        self,
        base_url: str,
        token_env: str = "BENCHDIAG_API_TOKEN",
        timeout_s: float = 60.0,
        transport: httpx.BaseTransport | None = None,
    ):
        headers = {}
        token = os.environ.get(token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s
        self._client = httpx.Client(headers=headers, transport=transport)

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        resp = self._client.post(self.base_url, json={"texts": list(texts)}, timeout=self.timeout_s)
        resp.raise_for_status()
        body = resp.json()
        if "token_vectors" in body and body["token_vectors"] is not None:
            rows = body["token_vectors"]
        else:
            rows = body.get("vectors")
        if not isinstance(rows, list) or len(rows) != len(texts):
            raise ValueError("embedding service returned a malformed or short 'vectors' list")
        return [np.asarray(r, dtype=np.float64) for r in rows]


class FileEmbeddingClient:
    """Serves precomputed vectors from an embedding file, keyed by id."""

    def __init__(self, path: str | Path):
        self.embeddings = load_embeddings(path)

    def lookup(self, ids: Sequence[str]) -> tuple[EmbeddingSet, list[str]]:
        present = [k for k in ids if k in self.embeddings]
        missing = [k for k in ids if k not in self.embeddings]
        return self.embeddings.subset(present), missing


@dataclass
class FetchResult:
    embeddings: EmbeddingSet
    missing: list[str]
    errors: list[str]


def fetch_embeddings(
    client: EmbeddingClient,
    texts: Sequence[tuple[str, str]],
    truncate_at: int = DEFAULT_TRUNCATE_AT,
    tokenizer: Tokenizer | None = None,
    batch_size: int = 32,
    concurrency: int = 2,
    max_attempts: int = 3,
    backoff_base: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> FetchResult:
    """Embed ``(id, text)`` pairs in batches.

    Each text is cut to ``truncate_at`` tokens before it is sent. A batch that
    still fails after ``max_attempts`` is left out; its ids are listed in
    ``missing``. Token matrices are mean pooled for the pooled vector and kept
    alongside it.
    """
    tokenizer = tokenizer or WhitespaceTokenizer()
    items = [(k, tokenizer.truncate(t, truncate_at)) for k, t in texts]
    batches = [items[i:i + batch_size] for i in range(0, len(items), batch_size)]

    def run(batch):
        err = None
        for attempt in range(1, max_attempts + 1):
            try:
                return client.embed([t for _, t in batch]), None
            except (httpx.HTTPError, ValueError) as exc:
                err = f"{type(exc).__name__}: {exc}"
                if attempt < max_attempts:
                    sleep(backoff_base * 2 ** (attempt - 1))
        return None, err

    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        results = list(pool.map(run, batches))

    vectors, token_mats, missing, errors = [], {}, [], []
    for batch, (arrays, err) in zip(batches, results):
        if arrays is None:
            missing.extend(k for k, _ in batch)
            errors.append(err)
            logger.warning("embedding batch of %d failed: %s", len(batch), err)
            continue
        for (k, _), arr in zip(batch, arrays):
            arr = np.asarray(arr, dtype=np.float64)
            if arr.ndim == 2:
                token_mats[k] = arr
                vectors.append((k, pool_tokens(arr)))
            else:
                vectors.append((k, arr))
    if not vectors:
        return FetchResult(EmbeddingSet.empty(), missing, errors)
    emb = EmbeddingSet.from_vectors(vectors, tokens=token_mats or None)
    return FetchResult(emb, missing, errors)
