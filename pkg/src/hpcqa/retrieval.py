"""Two-stage retrieval: exact top-K cosine scan, then cross-encoder re-rank.

The index is an exact in-memory scan, not an ANN structure: cluster corpora
are thousands of chunks, and exactness keeps ranking reproducible. Scores are
computed per entry with the same dot-product primitive the ``cosine`` helper
uses, so a brute-force oracle matches bit for bit.

Ordering is total and deterministic everywhere: score descending, then
chunk_id ascending on ties.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import Chunk, IoError, PathNotFound, SchemaVersionMismatch
from .gateway import EmbeddingVector

logger = logging.getLogger(__name__)

INDEX_SCHEMA_VERSION = 1


class RetrievalError(Exception):
    pass


class DimensionMismatch(RetrievalError):
    pass


class ZeroVector(RetrievalError):
    pass


class DuplicateId(RetrievalError):
    pass


@dataclass(frozen=True)
class ScoredChunk:
    chunk_id: str
    bi_score: float
    rerank_score: float | None = None


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.dim != b.dim:
        raise DimensionMismatch(f"dims differ: {a.dim} vs {b.dim}")
    va = np.asarray(a.values, dtype=np.float64)
    vb = np.asarray(b.values, dtype=np.float64)
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine undefined for zero vectors")
    value = float(np.dot(va, vb)) / (na * nb)
    # Clamp floating-point spill just outside [-1, 1].
    return max(-1.0, min(1.0, value))


def _normalize(vector: EmbeddingVector) -> np.ndarray:
    arr = np.asarray(vector.values, dtype=np.float64)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise ZeroVector("cannot index a zero vector")
    return arr / norm


class VectorIndex:
    """Chunk embeddings, L2-normalized at insert, with unique chunk ids."""

    def __init__(self, dim: int):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim
        self._ids: list[str] = []
        self._vectors: list[np.ndarray] = []
        self._seen: set[str] = set()

    def __len__(self) -> int:
        return len(self._ids)

    def add(self, chunk_id: str, vector: EmbeddingVector) -> None:
        if vector.dim != self.dim:
            raise DimensionMismatch(f"vector dim {vector.dim} != index dim {self.dim}")
        if chunk_id in self._seen:
            raise DuplicateId(f"chunk id already indexed: {chunk_id}")
        self._seen.add(chunk_id)
        self._ids.append(chunk_id)
        self._vectors.append(_normalize(vector))

    def entries(self) -> list[tuple[str, np.ndarray]]:
        return list(zip(self._ids, self._vectors))

    def ids(self) -> list[str]:
        return list(self._ids)

    def subset(self, keep: Callable[[str], bool]) -> "VectorIndex":
        """New index over the entries whose id passes ``keep``; vectors are
        copied verbatim (no re-normalization), so scores stay bit-identical."""
        out = VectorIndex(self.dim)
        for cid, vec in zip(self._ids, self._vectors):
            if keep(cid):
                out._ids.append(cid)
                out._vectors.append(vec)
                out._seen.add(cid)
        return out

    def scan(self, query_vector: EmbeddingVector) -> list[tuple[str, float]]:
        """Cosine of the query against every entry. Per-entry np.dot keeps the
        arithmetic identical to an entry-by-entry oracle."""
        q = _normalize(query_vector)
        if q.shape[0] != self.dim:
            raise DimensionMismatch(f"query dim {q.shape[0]} != index dim {self.dim}")
        return [(cid, float(np.dot(vec, q))) for cid, vec in zip(self._ids, self._vectors)]


Embedder = Callable[[Sequence[str]], list[EmbeddingVector]]


def build_index(chunks: Sequence[Chunk], embedder: Embedder) -> VectorIndex:
    """Embed every chunk by its text (command chunks carry their description
    as text, so descriptions are what gets embedded) and index the vectors."""
    if not chunks:
        raise RetrievalError("cannot build an index over zero chunks")
    ids = [c.id for c in chunks]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise DuplicateId(f"duplicate chunk ids: {dupes}")
    vectors = embedder([c.text for c in chunks])
    dims = {v.dim for v in vectors}
    if len(dims) != 1:
        raise DimensionMismatch(f"embedder returned inconsistent dims: {sorted(dims)}")
    index = VectorIndex(dim=dims.pop())
    for chunk, vector in zip(chunks, vectors):
        index.add(chunk.id, vector)
    return index


def retrieve_topk(
    query: str, index: VectorIndex, k: int, embedder: Embedder
) -> list[ScoredChunk]:
    if len(index) == 0:
        raise RetrievalError("index is empty")
    if k <= 0:
        raise ValueError("k must be positive")
    query_vector = embedder([query])[0]
    scored = index.scan(query_vector)
    scored.sort(key=lambda item: (-item[1], item[0]))
    return [ScoredChunk(chunk_id=cid, bi_score=score) for cid, score in scored[:k]]


Reranker = Callable[[str, Sequence[str]], list[float]]


def rerank_candidates(
    query: str,
    candidates: Sequence[ScoredChunk],
    k_prime: int,
    reranker: Reranker,
    chunk_lookup: dict[str, Chunk],
) -> list[ScoredChunk]:
    """Re-score candidates jointly with the query and keep the best k_prime.

    Candidates are scored by their chunk text (for command chunks that text is
    the description). The first-stage bi_score rides along unchanged.
    """
    if not candidates:
        raise RetrievalError("no candidates to rerank")
    if k_prime <= 0:
        raise ValueError("k_prime must be positive")
    passages = []
    for candidate in candidates:
        chunk = chunk_lookup.get(candidate.chunk_id)
        if chunk is None:
            raise RetrievalError(f"candidate chunk not found: {candidate.chunk_id}")
        passages.append(chunk.text)
    scores = reranker(query, passages)
    rescored = [
        replace(candidate, rerank_score=float(score))
        for candidate, score in zip(candidates, scores)
    ]
    rescored.sort(key=lambda c: (-c.rerank_score, c.chunk_id))
    return rescored[:k_prime]


def save_index(index: VectorIndex, path: str | Path) -> None:
    payload = {
        "schema_version": INDEX_SCHEMA_VERSION,
        "dim": index.dim,
        "entries": [
            {"chunk_id": cid, "vector": [float(v) for v in vec]}
            for cid, vec in index.entries()
        ],
    }
    try:
        Path(path).write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write index to {path}: {exc}") from exc


def load_index(path: str | Path) -> VectorIndex:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise PathNotFound(f"index file not found: {path}") from exc
    except (OSError, ValueError) as exc:
        raise IoError(f"cannot read index from {path}: {exc}") from exc
    version = payload.get("schema_version")
    if version != INDEX_SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"index schema_version {version!r} != {INDEX_SCHEMA_VERSION}"
        )
    index = VectorIndex(dim=payload["dim"])
    for entry in payload["entries"]:
        index.add(entry["chunk_id"], EmbeddingVector(entry["vector"]))
    return index
