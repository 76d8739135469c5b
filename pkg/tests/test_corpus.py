import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hpcqa.corpus import (
    Chunk,
    ChunkingPolicy,
    Document,
    PathNotFound,
    SchemaVersionMismatch,
    chunk_document,
    chunk_document_llm,
    ingest_directory,
    load_corpus,
    reconstruct_document,
    save_corpus,
)
from hpcqa.gateway import offline_gateway


class TestIngest:
    def test_three_files_lexicographic(self, tmp_path):
        for name in ["b.md", "a.txt", "c.md"]:
            (tmp_path / name).write_text(f"body of {name}", encoding="utf-8")
        docs, warnings = ingest_directory(tmp_path)
        assert [d.id for d in docs] == ["a.txt", "b.md", "c.md"]
        assert warnings == []

    def test_empty_directory(self, tmp_path):
        docs, warnings = ingest_directory(tmp_path)
        assert docs == [] and warnings == []

    def test_non_utf8_file_excluded_with_warning(self, tmp_path):
        (tmp_path / "good.md").write_text("fine", encoding="utf-8")
        (tmp_path / "bad.md").write_bytes(b"\xff\xfe broken \x80")
        docs, warnings = ingest_directory(tmp_path)
        assert [d.id for d in docs] == ["good.md"]
        assert len(warnings) == 1 and "bad.md" in warnings[0]

    def test_missing_directory(self, tmp_path):
        with pytest.raises(PathNotFound):
            ingest_directory(tmp_path / "nope")

    def test_ignores_other_suffixes(self, tmp_path):
        (tmp_path / "keep.md").write_text("x", encoding="utf-8")
        (tmp_path / "skip.pdf").write_text("y", encoding="utf-8")
        docs, _ = ingest_directory(tmp_path)
        assert [d.id for d in docs] == ["keep.md"]

    def test_nested_files_use_relative_ids(self, tmp_path):
        sub = tmp_path / "guides"
        sub.mkdir()
        (sub / "jobs.md").write_text("scheduling", encoding="utf-8")
        docs, _ = ingest_directory(tmp_path)
        assert docs[0].id == "guides/jobs.md"


def _doc(text: str) -> Document:
    return Document(id="d", source_uri="mem", text=text)


class TestChunking:
    def test_short_doc_single_chunk(self):
        doc = _doc("x" * 100)
        chunks = chunk_document(doc, ChunkingPolicy(target_chars=1500, overlap_chars=200))
        assert len(chunks) == 1
        assert chunks[0].text == doc.text
        assert chunks[0].ordinal == 0

    def test_blank_line_boundary(self):
        # Two halves of 1500 chars each; the first ends with the blank line.
        first = "a" * 1498 + "\n\n"
        second = "b" * 1500
        doc = _doc(first + second)
        chunks = chunk_document(doc, ChunkingPolicy(target_chars=1500, overlap_chars=0))
        assert len(chunks) == 2
        # Oracle: the boundary sits exactly where string search finds the blank line.
        boundary = doc.text.index("\n\n") + 2
        assert chunks[0].text == doc.text[:boundary]
        assert chunks[1].text == doc.text[boundary:]

    def test_every_character_covered(self):
        doc = _doc("one. two. three. " * 40)
        policy = ChunkingPolicy(target_chars=50, overlap_chars=10)
        chunks = chunk_document(doc, policy)
        assert reconstruct_document(chunks, policy.overlap_chars) == doc.text

    def test_heading_starts_new_chunk(self):
        body = "# First\n" + "a" * 60 + "\n# Second\n" + "b" * 60
        doc = _doc(body)
        chunks = chunk_document(doc, ChunkingPolicy(target_chars=80, overlap_chars=0))
        assert any(c.text.startswith("# Second") for c in chunks)

    def test_pure_function(self):
        doc = _doc("alpha beta. " * 500)
        policy = ChunkingPolicy(target_chars=200, overlap_chars=30)
        assert chunk_document(doc, policy) == chunk_document(doc, policy)

    def test_ordinals_contiguous_and_ids_stable(self):
        doc = _doc("word " * 2000)
        chunks = chunk_document(doc, ChunkingPolicy(target_chars=300, overlap_chars=50))
        assert [c.ordinal for c in chunks] == list(range(len(chunks)))
        assert chunks[0].id == "d#0000"

    @settings(max_examples=40, deadline=None)
    @given(
        text=st.text(
            alphabet=st.sampled_from(list("ab .\n#é!?")), min_size=1, max_size=50_000
        ),
        target=st.integers(min_value=20, max_value=2000),
        overlap=st.integers(min_value=0, max_value=19),
    )
    def test_size_bound_and_reconstruction(self, text, target, overlap):
        doc = _doc(text)
        policy = ChunkingPolicy(target_chars=target, overlap_chars=overlap)
        chunks = chunk_document(doc, policy)
        assert all(len(c.text) <= target + overlap for c in chunks)
        assert reconstruct_document(chunks, overlap) == text

    def test_policy_rejects_overlap_ge_target(self):
        with pytest.raises(ValueError):
            ChunkingPolicy(target_chars=100, overlap_chars=100)


class TestLlmProposedBoundaries:
    def test_valid_offsets_accepted(self):
        doc = _doc("x" * 100)
        gw = offline_gateway(script={"Propose split offsets": "[40, 80]"})
        chunks = chunk_document_llm(doc, ChunkingPolicy(target_chars=50, overlap_chars=0), gw)
        assert [c.text for c in chunks] == ["x" * 40, "x" * 40, "x" * 20]

    def test_invalid_offsets_fall_back(self):
        doc = _doc("y" * 100)
        policy = ChunkingPolicy(target_chars=50, overlap_chars=0)
        gw = offline_gateway(script={"Propose split offsets": "[999]"})
        assert chunk_document_llm(doc, policy, gw) == chunk_document(doc, policy)

    def test_unparseable_reply_falls_back(self):
        doc = _doc("z" * 100)
        policy = ChunkingPolicy(target_chars=50, overlap_chars=0)
        gw = offline_gateway(script={"Propose split offsets": "split wherever you like"})
        assert chunk_document_llm(doc, policy, gw) == chunk_document(doc, policy)

    def test_oversized_segment_falls_back(self):
        doc = _doc("w" * 100)
        policy = ChunkingPolicy(target_chars=50, overlap_chars=0)
        gw = offline_gateway(script={"Propose split offsets": "[10]"})  # 90-char tail
        assert chunk_document_llm(doc, policy, gw) == chunk_document(doc, policy)


class TestPersistence:
    def _chunks(self, n=10):
        return [
            Chunk(id=f"c{i}", doc_id="d", ordinal=i, text=f"body {i} é✓", kind="documentation")
            for i in range(n)
        ]

    def test_round_trip_equality(self, tmp_path):
        chunks = self._chunks()
        path = tmp_path / "corpus.json"
        save_corpus(chunks, path)
        assert load_corpus(path) == chunks

    def test_unknown_schema_version(self, tmp_path):
        path = tmp_path / "corpus.json"
        path.write_text(json.dumps({"schema_version": 99, "chunks": []}), encoding="utf-8")
        with pytest.raises(SchemaVersionMismatch):
            load_corpus(path)

    def test_non_ascii_preserved_exactly(self, tmp_path):
        text = "GPUセクション — überschüssig ✓\n\ttab"
        chunk = Chunk(id="c", doc_id="d", ordinal=0, text=text)
        path = tmp_path / "corpus.json"
        save_corpus([chunk], path)
        loaded = load_corpus(path)[0]
        assert loaded.text.encode("utf-8") == text.encode("utf-8")

    def test_save_deterministic_bytes(self, tmp_path):
        chunks = self._chunks(5)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        save_corpus(chunks, a)
        save_corpus(chunks, b)
        assert a.read_bytes() == b.read_bytes()
