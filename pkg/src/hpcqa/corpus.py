"""Cluster documentation ingest, chunking, and corpus persistence.

Chunking is deterministic recursive splitting on a separator hierarchy
(markdown headings, blank lines, sentence ends, raw characters), with a
backward overlap between neighboring chunks. An optional mode asks the chat
model to propose split offsets and falls back to the deterministic splitter
whenever the proposal is invalid.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path

logger = logging.getLogger(__name__)

CORPUS_SCHEMA_VERSION = 1
DOCUMENT_KINDS = ("documentation", "command")
DEFAULT_SPLIT_ORDER = ("heading", "blank_line", "sentence", "character")
INGEST_SUFFIXES = (".md", ".txt")


class CorpusError(Exception):
    """Base class for corpus problems."""


class PathNotFound(CorpusError):
    pass


class IoError(CorpusError):
    pass


class SchemaVersionMismatch(CorpusError):
    pass


@dataclass(frozen=True)
class Document:
    id: str
    source_uri: str
    text: str
    kind: str = "documentation"

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("document text must be non-empty")
        if self.kind not in DOCUMENT_KINDS:
            raise ValueError(f"kind must be one of {DOCUMENT_KINDS}")


@dataclass(frozen=True)
class Chunk:
    id: str
    doc_id: str
    ordinal: int
    text: str
    kind: str = "documentation"

    def __post_init__(self) -> None:
        if self.ordinal < 0:
            raise ValueError("ordinal must be >= 0")
        if not self.text:
            raise ValueError("chunk text must be non-empty")
        if self.kind not in DOCUMENT_KINDS:
            raise ValueError(f"kind must be one of {DOCUMENT_KINDS}")


@dataclass(frozen=True)
class ChunkingPolicy:
    target_chars: int = 1500
    overlap_chars: int = 200
    split_order: tuple[str, ...] = DEFAULT_SPLIT_ORDER

    def __post_init__(self) -> None:
        if self.target_chars <= 0:
            raise ValueError("target_chars must be positive")
        if self.overlap_chars < 0:
            raise ValueError("overlap_chars must be non-negative")
        if self.overlap_chars >= self.target_chars:
            raise ValueError("overlap_chars must be smaller than target_chars")


def ingest_directory(path: str | Path, kind: str = "documentation") -> tuple[list[Document], list[str]]:
    """Load every .md/.txt file under ``path`` as one Document each.

    Document ids are the POSIX-style relative paths, in lexicographic order.
    Files that cannot be read or are not valid UTF-8 are skipped; the reasons
    come back in the warnings list.
    """
    root = Path(path)
    if not root.is_dir():
        raise PathNotFound(f"not a readable directory: {root}")
    documents: list[Document] = []
    warnings: list[str] = []
    files = sorted(
        (p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in INGEST_SUFFIXES),
        key=lambda p: p.relative_to(root).as_posix(),
    )
    for file_path in files:
        rel = file_path.relative_to(root).as_posix()
        try:
            text = file_path.read_text(encoding="utf-8")
        except UnicodeDecodeError:
            warnings.append(f"{rel}: not valid UTF-8, skipped")
            continue
        except OSError as exc:
            warnings.append(f"{rel}: unreadable ({exc.__class__.__name__}), skipped")
            continue
        if not text:
            warnings.append(f"{rel}: empty file, skipped")
            continue
        documents.append(Document(id=rel, source_uri=str(file_path), text=text, kind=kind))
    return documents, warnings


# ---------------------------------------------------------------------------
# Deterministic splitting
# ---------------------------------------------------------------------------

_HEADING_RE = re.compile(r"^#{1,6} ", re.MULTILINE)
_BLANK_LINE_RE = re.compile(r"\n\n")
_SENTENCE_RE = re.compile(r"[.!?][ \t]|\n")


def _boundaries(text: str, level: str) -> list[int]:
    """Interior cut positions for one separator level.

    Cuts are positions, not removals: pieces always concatenate back to the
    original text. Headings cut before the heading line; blank lines and
    sentence ends cut after the separator.
    """
    positions: set[int] = set()
    if level == "heading":
        for m in _HEADING_RE.finditer(text):
            positions.add(m.start())
    elif level == "blank_line":
        for m in _BLANK_LINE_RE.finditer(text):
            positions.add(m.end())
    elif level == "sentence":
        for m in _SENTENCE_RE.finditer(text):
            positions.add(m.end())
    elif level == "character":
        pass
    else:
        raise ValueError(f"unknown split level: {level}")
    return sorted(p for p in positions if 0 < p < len(text))


def _split(text: str, levels: tuple[str, ...], target: int) -> list[str]:
    if len(text) <= target:
        return [text]
    if not levels or levels[0] == "character":
        return [text[i : i + target] for i in range(0, len(text), target)]
    cuts = _boundaries(text, levels[0])
    rest = levels[1:]
    if not cuts:
        return _split(text, rest, target)
    edges = [0] + cuts + [len(text)]
    atoms: list[str] = []
    for a, b in zip(edges, edges[1:]):
        piece = text[a:b]
        if len(piece) > target:
            atoms.extend(_split(piece, rest, target))
        elif piece:
            atoms.append(piece)
    # Greedily pack neighboring atoms back up to the target size.
    segments: list[str] = []
    current = ""
    for atom in atoms:
        if current and len(current) + len(atom) > target:
            segments.append(current)
            current = atom
        else:
            current += atom
    if current:
        segments.append(current)
    return segments


def chunk_document(doc: Document, policy: ChunkingPolicy = ChunkingPolicy()) -> list[Chunk]:
    """Split one document into overlapping chunks.

    Core segments partition ``doc.text`` exactly; each chunk then extends
    backward by up to ``overlap_chars`` into its predecessor, so no chunk
    exceeds ``target_chars + overlap_chars`` and stripping the overlaps
    reconstructs the document.
    """
    segments = _split(doc.text, tuple(policy.split_order), policy.target_chars)
    chunks: list[Chunk] = []
    offset = 0
    for ordinal, segment in enumerate(segments):
        start = offset
        end = offset + len(segment)
        overlap = min(policy.overlap_chars, start) if ordinal > 0 else 0
        chunks.append(
            Chunk(
                id=f"{doc.id}#{ordinal:04d}",
                doc_id=doc.id,
                ordinal=ordinal,
                text=doc.text[start - overlap : end],
                kind=doc.kind,
            )
        )
        offset = end
    return chunks


def reconstruct_document(chunks: list[Chunk], overlap_chars: int) -> str:
    """Inverse of ``chunk_document`` for one document's chunk list."""
    ordered = sorted(chunks, key=lambda c: c.ordinal)
    text = ""
    for chunk in ordered:
        overlap = min(overlap_chars, len(text)) if text else 0
        if overlap and chunk.text[:overlap] != text[-overlap:]:
            raise CorpusError(f"chunk {chunk.id} does not overlap its predecessor")
        text += chunk.text[overlap:]
    return text


def chunk_document_llm(doc: Document, policy: ChunkingPolicy, gateway) -> list[Chunk]:
    """Ask the chat model for split offsets; fall back on any invalid output.

    The model is asked for a JSON array of character offsets. Offsets must be
    strictly increasing, interior to the text, and produce segments no larger
    than ``target_chars``; anything else (including unparseable output) falls
    back to the deterministic splitter.
    """
    from .gateway import ChatMessage, ChatRequest, GatewayError

    prompt = (
        "Propose split offsets for the following text so each segment has at most "
        f"{policy.target_chars} characters. Reply with only a JSON array of integer "
        f"character offsets, e.g. [120, 342]. The text has {len(doc.text)} characters.\n\n"
        + doc.text
    )
    try:
        reply = gateway.complete_chat(
            ChatRequest(messages=[ChatMessage(role="user", content=prompt)])
        )
        offsets = json.loads(reply.strip())
        valid = (
            isinstance(offsets, list)
            and all(isinstance(o, int) for o in offsets)
            and offsets == sorted(set(offsets))
            and all(0 < o < len(doc.text) for o in offsets)
        )
        if valid:
            edges = [0] + list(offsets) + [len(doc.text)]
            if all(b - a <= policy.target_chars for a, b in zip(edges, edges[1:])):
                chunks = []
                for ordinal, (a, b) in enumerate(zip(edges, edges[1:])):
                    overlap = min(policy.overlap_chars, a) if ordinal > 0 else 0
                    chunks.append(
                        Chunk(
                            id=f"{doc.id}#{ordinal:04d}",
                            doc_id=doc.id,
                            ordinal=ordinal,
                            text=doc.text[a - overlap : b],
                            kind=doc.kind,
                        )
                    )
                return chunks
        logger.warning("model split proposal invalid for %s, falling back", doc.id)
    except (GatewayError, ValueError) as exc:
        logger.warning("model split failed for %s (%s), falling back", doc.id, exc)
    return chunk_document(doc, policy)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_corpus(chunks: list[Chunk], path: str | Path) -> None:
    payload = {
        "schema_version": CORPUS_SCHEMA_VERSION,
        "chunks": [
            {"id": c.id, "doc_id": c.doc_id, "ordinal": c.ordinal, "kind": c.kind, "text": c.text}
            for c in chunks
        ],
    }
    try:
        Path(path).write_text(
            json.dumps(payload, ensure_ascii=False, indent=None, sort_keys=True),
            encoding="utf-8",
        )
    except OSError as exc:
        raise IoError(f"cannot write corpus to {path}: {exc}") from exc


def load_corpus(path: str | Path) -> list[Chunk]:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise PathNotFound(f"corpus file not found: {path}") from exc
    except (OSError, ValueError) as exc:
        raise IoError(f"cannot read corpus from {path}: {exc}") from exc
    version = payload.get("schema_version")
    if version != CORPUS_SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"corpus schema_version {version!r} != {CORPUS_SCHEMA_VERSION}"
        )
    return [
        Chunk(
            id=row["id"],
            doc_id=row["doc_id"],
            ordinal=row["ordinal"],
            text=row["text"],
            kind=row["kind"],
        )
        for row in payload["chunks"]
    ]
