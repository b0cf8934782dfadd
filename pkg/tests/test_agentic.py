"""Hierarchical indexing, cascade retrieval, and the bounded refine loop."""

import numpy as np
import pytest

from conftest import WORLD_DOC
from minelens.agentic import (
    CascadeParams,
    PageMap,
    Section,
    agentic_answer,
    build_hierarchy,
    cascade_retrieve,
    detect_sections,
    parse_page_markers,
    render_source_log,
    sufficiency,
)
from minelens.errors import FlatDocument, InsufficientEvidence
from minelens.providers import MockProvider, ScriptedProvider
from minelens.rag import Chunk, HashedBagEmbedder, VectorStore

BOOK_FILE = "Scambary_MyCountryMyMine_2013_239p.pdf"


class TestPageMarkers:
    def test_unmarked_text_is_page_one(self):
        clean, pages = parse_page_markers("no sentinels here")
        assert clean == "no sentinels here"
        assert pages.page_for(0) == 1
        assert pages.page_for(len(clean) - 1) == 1

    def test_markers_are_stripped_and_offsets_tracked(self):
        clean, pages = parse_page_markers("[[page:3]]abc[[page:7]]def")
        assert clean == "abcdef"
        assert [pages.page_for(i) for i in range(6)] == [3, 3, 3, 7, 7, 7]

    def test_text_before_first_marker_counts_as_page_one(self):
        clean, pages = parse_page_markers("intro [[page:5]]rest")
        assert clean == "intro rest"
        assert pages.page_for(0) == 1
        assert pages.page_for(5) == 1
        assert pages.page_for(6) == 5

    def test_adjacent_markers_last_wins(self):
        clean, pages = parse_page_markers("[[page:2]][[page:3]]x")
        assert clean == "x"
        assert pages.page_for(0) == 3

    def test_page_map_round_trips(self):
        _, pages = parse_page_markers("a[[page:9]]b[[page:12]]c")
        again = PageMap.from_list(pages.to_list())
        for off in range(3):
            assert again.page_for(off) == pages.page_for(off)


class TestDetectSections:
    def test_headings_bound_section_bodies(self):
        text = "# Title\nintro body\n## Second\nmore body\n"
        sections = detect_sections(text)
        assert [h for h, _, _ in sections] == ["Title", "Second"]
        h, s, e = sections[0]
        assert text[s:e] == "\nintro body\n"
        assert sections[1][2] == len(text)

    def test_all_heading_levels_match(self):
        text = "\n".join(f"{'#' * n} H{n}\nbody {n}" for n in range(1, 7))
        assert len(detect_sections(text)) == 6

    def test_unheaded_text_raises(self):
        with pytest.raises(FlatDocument):
            detect_sections("just prose with no headings at all")


class TestBuildHierarchy:
    def test_world_doc_structure(self):
        h = build_hierarchy(WORLD_DOC, "review", "northern_mining_review.txt")
        assert h.title == "Northern Mining Review"
        assert [s.section_id for s in h.sections] == [f"s{i:03d}" for i in range(1, len(h.sections) + 1)]
        assert len(h.sections) >= 3
        assert len(h.summaries) == len(h.sections)

    def test_summary_is_header_plus_leading_tokens(self):
        h = build_hierarchy(WORLD_DOC, "review", "r.txt")
        clean, _ = parse_page_markers(WORLD_DOC)
        for sec, summary in zip(h.sections, h.summaries):
            assert summary.chunk_id == f"review#{sec.section_id}:summary"
            assert summary.text.startswith(f"{sec.header}. ")
            body_prefix = summary.text[len(sec.header) + 2 :]
            assert body_prefix in clean[sec.char_range[0] : sec.char_range[1]]
            assert summary.metadata["kind"] == "summary"

    def test_chunks_point_back_into_clean_text(self):
        h = build_hierarchy(WORLD_DOC, "review", "r.txt")
        clean, _ = parse_page_markers(WORLD_DOC)
        assert h.chunks
        for c in h.chunks:
            md = c.metadata
            assert md["kind"] == "document"
            assert md["source_file"] == "r.txt"
            assert clean[md["char_start"] : md["char_end"]] == c.text
            assert md["page_start"] <= md["page_end"]

    def test_page_attribution_follows_sentinels(self):
        h = build_hierarchy(WORLD_DOC, "review", "r.txt")
        pages = {c.metadata["page_start"] for c in h.chunks} | {
            c.metadata["page_end"] for c in h.chunks
        }
        assert {1, 3, 178} <= pages

    def test_long_section_splits_into_multiple_chunks(self):
        h = build_hierarchy(WORLD_DOC, "review", "r.txt")
        by_section = {}
        for c in h.chunks:
            by_section.setdefault(c.metadata["parent_section_id"], []).append(c)
        assert max(len(v) for v in by_section.values()) >= 2

    def test_flat_document_becomes_single_section(self):
        h = build_hierarchy("plain prose without any headings", "flat", "f.txt")
        assert h.title == "flat"
        assert len(h.sections) == 1
        assert h.sections[0].header == "flat"
        assert len(h.chunks) == 1

    def test_empty_section_body_skipped_from_stores(self):
        text = "# A\n\n# B\nactual body words here\n"
        h = build_hierarchy(text, "d", "f.txt")
        assert len(h.sections) == 2
        assert len(h.summaries) == 1
        assert h.summaries[0].metadata["parent_section_id"] == "s002"

    def test_map_dict_round_trips_sections(self):
        h = build_hierarchy(WORLD_DOC, "review", "r.txt")
        doc = h.to_map_dict()
        assert doc["doc_id"] == "review"
        for raw, sec in zip(doc["sections"], h.sections):
            assert Section.from_dict(raw) == sec


def stores_from(hierarchies, captions=(), dim=256):
    emb = HashedBagEmbedder(dim)
    section_store = VectorStore("sections", emb)
    document_store = VectorStore("documents", emb)
    caption_store = VectorStore("captions", emb)
    for h in hierarchies:
        for s in h.summaries:
            section_store.add_text(s)
        for c in h.chunks:
            document_store.add_text(c)
    for c in captions:
        caption_store.add_text(c)
    return section_store, document_store, caption_store


def caption_chunk(cid, text, site):
    return Chunk(
        chunk_id=cid,
        doc_id=cid.split(":")[0],
        text=text,
        token_span=(0, len(text.split())),
        metadata={"kind": "caption", "site_id": site},
    )


AUSTRALIA_CAPTIONS = [
    caption_chunk(
        "cap-elliots:0-12",
        "Tailings seepage stains the southern pit wall at the uranium operation.",
        "ElliotsNo1OpenCut",
    ),
    caption_chunk(
        "cap-endeavour:0-12",
        "Underground headframes and a broad zinc stockpile apron dominate the scene.",
        "Endeavour22",
    ),
    caption_chunk(
        "cap-central:0-12",
        "A copper smelter plume drifts east of the open pit benches.",
        "CentralNorthOpenPit",
    ),
]


def agreement_book():
    filler = " ".join(f"context word{i} filler" for i in range(30))
    agreement = (
        "The mining agreement set out royalty distribution between the traditional "
        "owners and the operating company, with annual review clauses and a "
        "dispute resolution ladder that escalates from site meetings to arbitration. "
    ) * 6
    text = (
        "[[page:1]]# My Country My Mine\n"
        "An account of negotiation and development on Aboriginal land.\n"
        "[[page:3]]## Historical Background\n"
        f"The exploration era began before statehood. {filler}\n"
        "[[page:178]]## The Agreement\n"
        f"{agreement}\n"
    )
    return build_hierarchy(text, "book", BOOK_FILE)


class TestCascade:
    def test_all_stores_empty_raises(self):
        s, d, c = stores_from([])
        with pytest.raises(InsufficientEvidence):
            cascade_retrieve("anything", s, d, c)

    def test_captions_only_world_still_answers_queries(self):
        s, d, c = stores_from([], captions=AUSTRALIA_CAPTIONS)
        evidence, record = cascade_retrieve("tailings seepage southern pit", s, d, c)
        assert record["routed_sections"] == []
        assert record["document_hits"] == 0
        assert evidence.consolidated
        assert evidence.consolidated[0][0].chunk.metadata["site_id"] == "ElliotsNo1OpenCut"

    def test_routing_restricts_document_search(self):
        lead_in = " ".join(f"padding token{i}" for i in range(70))
        text = (
            "# Tailings dam engineering\n"
            "Entirely unrelated filler prose sits in this section body.\n"
            "# Wildlife corridor\n"
            f"{lead_in}. Tailings dam engineering details buried deep here.\n"
        )
        h = build_hierarchy(text, "d", "d.txt")
        s, d, c = stores_from([h])
        narrow = CascadeParams(k_sections=1, k_chunks=8)
        evidence, record = cascade_retrieve("tailings dam engineering", s, d, c, narrow)
        assert record["routed_sections"] == ["d#s001"]
        texts = [h_.chunk.text for h_, _ in evidence.document_hits]
        assert all("buried deep" not in t for t in texts)

        wide = CascadeParams(k_sections=2, k_chunks=8)
        evidence, record = cascade_retrieve("tailings dam engineering", s, d, c, wide)
        assert record["routed_sections"] == ["d#s001", "d#s002"]
        texts = [h_.chunk.text for h_, _ in evidence.document_hits]
        assert any("buried deep" in t for t in texts)

    def test_full_routing_matches_unrestricted_search(self):
        h = agreement_book()
        s, d, c = stores_from([h], captions=AUSTRALIA_CAPTIONS)
        params = CascadeParams(k_sections=len(h.sections), k_chunks=6, k_captions=3)
        query = "royalty distribution agreement with traditional owners"
        evidence, _ = cascade_retrieve(query, s, d, c, params)
        unrestricted = d.search(query, 6)
        assert [(h_.chunk.chunk_id, sc) for h_, sc in evidence.document_hits] == [
            (h_.chunk.chunk_id, sc) for h_, sc in unrestricted
        ]

    def test_consolidated_sorted_by_score_then_id(self):
        h = agreement_book()
        s, d, c = stores_from([h], captions=AUSTRALIA_CAPTIONS)
        evidence, _ = cascade_retrieve("the agreement", s, d, c)
        pairs = [(sc, h_.chunk.chunk_id) for h_, sc in evidence.consolidated]
        assert pairs == sorted(pairs, key=lambda p: (-p[0], p[1]))

    def test_record_counts_match_hits(self):
        h = agreement_book()
        s, d, c = stores_from([h], captions=AUSTRALIA_CAPTIONS)
        evidence, record = cascade_retrieve("agreement", s, d, c)
        assert record["caption_hits"] == len(evidence.caption_hits)
        assert record["document_hits"] == len(evidence.document_hits)
        assert record["query"] == "agreement"


def evidence_of(*texts):
    from minelens.rag import EmbeddedChunk
    from minelens.agentic import EvidenceSet

    emb = HashedBagEmbedder(64)
    hits = [
        (EmbeddedChunk(Chunk(f"c:{i}", "c", t, (0, 1), {}), emb.embed(t)), 1.0 - 0.1 * i)
        for i, t in enumerate(texts)
    ]
    return EvidenceSet(caption_hits=[], document_hits=hits, consolidated=hits)


class TestSufficiency:
    def test_verbatim_match_is_sufficient(self):
        ev = evidence_of("tailings dam seepage monitoring")
        ok, refined = sufficiency("tailings dam seepage monitoring", ev, 0.35)
        assert ok and refined is None

    def test_no_evidence_keeps_the_query(self):
        from minelens.agentic import EvidenceSet

        ev = EvidenceSet([], [], [])
        assert sufficiency("any query", ev, 0.35) == (False, "any query")

    def test_low_coverage_refines_with_top_chunk_words(self):
        ev = evidence_of("tailings dam seepage monitoring program")
        ev.consolidated[0] = (ev.consolidated[0][0], 0.1)  # force score failure
        ok, refined = sufficiency("groundwater contamination downstream", ev, 0.35)
        assert not ok
        assert refined == "groundwater contamination downstream tailings dam seepage"

    def test_refinement_skips_words_already_in_query(self):
        ev = evidence_of("groundwater tailings dam seepage")
        ev.consolidated[0] = (ev.consolidated[0][0], 0.1)
        ok, refined = sufficiency("groundwater quality", ev, 0.35)
        assert refined == "groundwater quality tailings dam seepage"

    def test_stopword_only_query_has_vacuous_coverage(self):
        ev = evidence_of("tailings dam wall")
        ok, refined = sufficiency("what is the", ev, 0.35)
        assert ok  # score 1.0 from evidence_of, coverage vacuously 1.0


class TestAgenticAnswer:
    def params(self, h):
        return CascadeParams(k_sections=len(h.sections), k_chunks=10, k_captions=3)

    def test_australia_dual_source_log_is_exact(self):
        h = agreement_book()
        s, d, c = stores_from([h], captions=AUSTRALIA_CAPTIONS)
        p178 = [ch.chunk_id for ch in h.chunks if ch.metadata["page_start"] == 178]
        p3 = [ch.chunk_id for ch in h.chunks if ch.metadata["page_start"] == 3]
        assert len(p178) >= 2 and len(p3) >= 1
        reply = (
            f"Royalty terms are set out in the agreement [src:{p178[0]}] with a dispute "
            f"ladder [src:{p178[1]}], against the exploration era background "
            f"[src:{p3[0]}]. Site captions: [src:cap-elliots:0-12] "
            f"[src:cap-endeavour:0-12] [src:cap-central:0-12]."
        )
        query = AUSTRALIA_CAPTIONS[0].text
        ans, trace = agentic_answer(
            ScriptedProvider([reply]), query, s, d, c, self.params(h)
        )
        expected_log = (
            "Caption Sources:\n"
            "ElliotsNo1OpenCut, Endeavour22, CentralNorthOpenPit\n"
            "Document Sources:\n"
            f"{BOOK_FILE} > Page 178\n"
            f"{BOOK_FILE} > Page 178\n"
            f"{BOOK_FILE} > Page 3"
        )
        assert ans.text == f"{reply}\n\n{expected_log}"
        assert ans.caption_sources == [
            "ElliotsNo1OpenCut",
            "Endeavour22",
            "CentralNorthOpenPit",
        ]
        assert ans.document_sources == [
            (BOOK_FILE, "Page 178"),
            (BOOK_FILE, "Page 178"),
            (BOOK_FILE, "Page 3"),
        ]
        assert len(trace.iterations) == 1
        assert trace.iterations[0]["sufficient"] is True

    def test_verbatim_query_answers_in_one_iteration(self):
        h = agreement_book()
        s, d, c = stores_from([h], captions=AUSTRALIA_CAPTIONS)
        ans, trace = agentic_answer(
            MockProvider(0), AUSTRALIA_CAPTIONS[1].text, s, d, c, self.params(h)
        )
        assert len(trace.iterations) == 1
        assert trace.final_query == AUSTRALIA_CAPTIONS[1].text
        assert "Caption Sources:" in ans.text and "Document Sources:" in ans.text

    def test_refinement_recovers_then_answers_original_query(self):
        # one chunk holds all three query words plus ~30 others, so the first
        # pass scores 0.28 (under threshold) and the term-injected retry 0.40
        emb = HashedBagEmbedder(4096)
        s = VectorStore("sections", emb)
        d = VectorStore("documents", emb)
        c = VectorStore("captions", emb)
        body = (
            "groundwater contamination downstream worsened after wet season discharge; "
            "quarterly bore sampling showed sulfate plus nitrate exceeding trigger values, "
            "so operators installed interception trenches plus extra monitoring wells near "
            "two seepage points behind dam three"
        )
        h = build_hierarchy(f"# Bore monitoring\n{body}\n", "m", "m.txt")
        for sm in h.summaries:
            s.add_text(sm)
        for ch in h.chunks:
            d.add_text(ch)

        seen = []

        class Echo:
            name = "echo"

            def complete(self, req):
                seen.append(req.user)
                return "Bore sampling confirmed the contamination."

        query = "groundwater contamination downstream"
        ans, trace = agentic_answer(Echo(), query, s, d, c)
        assert len(trace.iterations) == 2
        assert trace.iterations[0]["sufficient"] is False
        assert trace.iterations[1]["sufficient"] is True
        assert trace.final_query == f"{query} worsened after wet"
        assert f"Question: {query}" in seen[0]

    def test_out_of_corpus_query_is_refused_with_trace(self):
        h = agreement_book()
        s, d, c = stores_from([h], captions=AUSTRALIA_CAPTIONS)
        sentinel = ScriptedProvider([])  # refusal must not reach the provider
        with pytest.raises(InsufficientEvidence) as exc_info:
            agentic_answer(
                sentinel, "qzx vbnml wqpfr jklh zzyx", s, d, c, self.params(h)
            )
        trace = exc_info.value.trace
        assert trace is not None
        assert len(trace.iterations) == CascadeParams().max_refinements + 1
        assert all(rec["sufficient"] is False for rec in trace.iterations)

    def test_trace_is_bounded_on_fuzzed_queries(self):
        h = agreement_book()
        s, d, c = stores_from([h], captions=AUSTRALIA_CAPTIONS)
        rng = np.random.default_rng(77)
        vocab = (
            "royalty agreement owners tailings seepage zinc copper plume benches "
            "arbitration review exploration statehood qqq zzz xxx vvv"
        ).split()
        params = CascadeParams(k_sections=len(h.sections))
        for _ in range(50):
            q = " ".join(rng.choice(vocab, size=int(rng.integers(1, 6))))
            try:
                _, trace = agentic_answer(MockProvider(1), q, s, d, c, params)
            except InsufficientEvidence as exc:
                trace = exc.trace
            assert 1 <= len(trace.iterations) <= params.max_refinements + 1

    def test_same_query_gives_identical_trace_and_text(self):
        h = agreement_book()
        s, d, c = stores_from([h], captions=AUSTRALIA_CAPTIONS)
        runs = [
            agentic_answer(
                MockProvider(5), AUSTRALIA_CAPTIONS[2].text, s, d, c, self.params(h)
            )
            for _ in range(2)
        ]
        assert runs[0][0].text == runs[1][0].text
        assert runs[0][1].to_dict() == runs[1][1].to_dict()


class TestRenderSourceLog:
    def test_empty_citations_render_bare_headers(self):
        from minelens.rag import GroundedAnswer

        ans = GroundedAnswer(text="nothing cited", caption_sources=[], document_sources=[], evidence=[])
        assert render_source_log(ans, {}) == "Caption Sources:\nDocument Sources:"
