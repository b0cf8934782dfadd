"""Hierarchical document retrieval with a bounded query-refinement loop.

Long documents are indexed on three layers: a map of sections with page
ranges, embedded extractive section summaries for routing, and atomic chunks
pointing back at their parent section. A query runs coarse-to-fine: pick
sections by summary, search chunks inside them, search the caption store in
parallel, consolidate. If the evidence looks insufficient the query is
refined deterministically and retried, at most max_refinements times; a run
that never reaches sufficiency is refused rather than answered.
"""

from __future__ import annotations

import json
import re
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FlatDocument, InsufficientEvidence
from .providers import ChatProvider
from .rag import (
    Chunk,
    EmbeddedChunk,
    GroundedAnswer,
    VectorStore,
    answer as flat_answer,
    chunk as chunk_text,
    extract_citations,
    tokenize,
    tokenize_spans,
)

PAGE_MARKER = re.compile(r"\[\[page:(\d+)\]\]")
HEADING = re.compile(r"^(#{1,6})\s+(.+?)\s*$", re.MULTILINE)
SUMMARY_BUDGET = 60
STOPWORDS = frozenset(
    "a an and are as at be by do does for from has have how in is it of on or "
    "that the this to was were what when where which with".split()
)


class PageMap:
    """Char offset (marker-free text) -> page number lookup."""

    def __init__(self, entries: list[tuple[int, int]]):
        # entries ascending by offset; offset 0 always present
        self._offsets = [e[0] for e in entries]
        self._pages = [e[1] for e in entries]

    def page_for(self, offset: int) -> int:
        return self._pages[bisect_right(self._offsets, offset) - 1]

    def to_list(self) -> list[list[int]]:
        return [[o, p] for o, p in zip(self._offsets, self._pages)]

    @classmethod
    def from_list(cls, raw: list) -> "PageMap":
        return cls([(int(o), int(p)) for o, p in raw])


def parse_page_markers(text: str) -> tuple[str, PageMap]:
    """Strip [[page:N]] sentinels, keeping the offset where each page starts.
    Text before the first marker counts as page 1."""
    pieces: list[str] = []
    entries: list[tuple[int, int]] = [(0, 1)]
    clean_len = 0
    last = 0
    for m in PAGE_MARKER.finditer(text):
        pieces.append(text[last : m.start()])
        clean_len += m.start() - last
        entries.append((clean_len, int(m.group(1))))
        last = m.end()
    pieces.append(text[last:])
    clean = "".join(pieces)
    # collapse duplicate offsets (adjacent markers): the last one wins
    dedup: list[tuple[int, int]] = []
    for off, page in entries:
        if dedup and dedup[-1][0] == off:
            dedup[-1] = (off, page)
        else:
            dedup.append((off, page))
    return clean, PageMap(dedup)


@dataclass
class Section:
    section_id: str
    header: str
    char_range: tuple[int, int]  # within the marker-free text
    page_range: tuple[int, int]

    def to_dict(self) -> dict:
        return {
            "section_id": self.section_id,
            "header": self.header,
            "char_range": list(self.char_range),
            "page_range": list(self.page_range),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Section":
        return cls(
            section_id=doc["section_id"],
            header=doc["header"],
            char_range=tuple(doc["char_range"]),
            page_range=tuple(doc["page_range"]),
        )


@dataclass
class DocumentHierarchy:
    doc_id: str
    source_file: str
    title: str
    sections: list[Section]
    summaries: list[Chunk]
    chunks: list[Chunk]
    page_map: PageMap

    def to_map_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "source_file": self.source_file,
            "title": self.title,
            "sections": [s.to_dict() for s in self.sections],
            "page_map": self.page_map.to_list(),
        }


def detect_sections(clean: str) -> list[tuple[str, int, int]]:
    """(header, body_start, body_end) per markdown heading; heading lines are
    routing metadata, not body text."""
    matches = list(HEADING.finditer(clean))
    if not matches:
        raise FlatDocument("no heading lines found")
    out = []
    for i, m in enumerate(matches):
        body_start = m.end()
        body_end = matches[i + 1].start() if i + 1 < len(matches) else len(clean)
        out.append((m.group(2), body_start, body_end))
    return out


def build_hierarchy(
    text: str,
    doc_id: str,
    source_file: str,
    *,
    chunk_size: int = 150,
    overlap: int = 30,
    summary_budget: int = SUMMARY_BUDGET,
) -> DocumentHierarchy:
    clean, pages = parse_page_markers(text)
    try:
        raw_sections = detect_sections(clean)
        title = raw_sections[0][0]
    except FlatDocument:
        raw_sections = [(doc_id, 0, len(clean))]
        title = doc_id

    sections: list[Section] = []
    summaries: list[Chunk] = []
    chunks: list[Chunk] = []
    for idx, (header, body_start, body_end) in enumerate(raw_sections, start=1):
        section_id = f"s{idx:03d}"
        body = clean[body_start:body_end]
        last_char = max(body_end - 1, body_start)
        sections.append(
            Section(
                section_id=section_id,
                header=header,
                char_range=(body_start, body_end),
                page_range=(pages.page_for(body_start), pages.page_for(last_char)),
            )
        )
        tokens = tokenize_spans(body)
        if not tokens:
            continue

        base_meta = {"doc_id": doc_id, "parent_section_id": section_id, "source_file": source_file}
        n_summary = min(summary_budget, len(tokens))
        summary_text = body[tokens[0].start : tokens[n_summary - 1].end]
        summaries.append(
            Chunk(
                chunk_id=f"{doc_id}#{section_id}:summary",
                doc_id=doc_id,
                text=f"{header}. {summary_text}",
                token_span=(0, n_summary),
                metadata={**base_meta, "kind": "summary", "header": header},
            )
        )

        for c in chunk_text(body, f"{doc_id}#{section_id}", chunk_size, overlap):
            s, e = c.token_span
            char_start = body_start + tokens[s].start
            char_end = body_start + tokens[e - 1].end
            c.metadata = {
                **base_meta,
                "kind": "document",
                "char_start": char_start,
                "char_end": char_end,
                "page_start": pages.page_for(char_start),
                "page_end": pages.page_for(char_end - 1),
            }
            chunks.append(c)
    return DocumentHierarchy(
        doc_id=doc_id,
        source_file=source_file,
        title=title,
        sections=sections,
        summaries=summaries,
        chunks=chunks,
        page_map=pages,
    )


def save_hierarchy_map(h: DocumentHierarchy, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(h.to_map_dict(), indent=2))
    tmp.replace(path)


# ------------------------------------------------------------------- cascade


@dataclass(frozen=True)
class CascadeParams:
    k_sections: int = 2
    k_chunks: int = 4
    k_captions: int = 3
    sufficiency_threshold: float = 0.35
    max_refinements: int = 3


@dataclass
class EvidenceSet:
    caption_hits: list[tuple[EmbeddedChunk, float]]
    document_hits: list[tuple[EmbeddedChunk, float]]
    consolidated: list[tuple[EmbeddedChunk, float]]

    @property
    def top_score(self) -> float | None:
        return self.consolidated[0][1] if self.consolidated else None


@dataclass
class CascadeTrace:
    iterations: list[dict] = field(default_factory=list)
    final_query: str = ""

    def to_dict(self) -> dict:
        return {"iterations": list(self.iterations), "final_query": self.final_query}


def cascade_retrieve(
    query: str,
    section_store: VectorStore,
    document_store: VectorStore,
    caption_store: VectorStore,
    params: CascadeParams = CascadeParams(),
) -> tuple[EvidenceSet, dict]:
    if not (len(section_store) or len(document_store) or len(caption_store)):
        raise InsufficientEvidence("all retrieval stores are empty")

    routed = section_store.search(query, params.k_sections)
    selected = {
        (h.chunk.metadata["doc_id"], h.chunk.metadata["parent_section_id"]) for h, _ in routed
    }
    document_hits = document_store.search(
        query,
        params.k_chunks,
        flt=lambda c: (c.metadata.get("doc_id"), c.metadata.get("parent_section_id")) in selected,
    )
    caption_hits = caption_store.search(query, params.k_captions)

    merged: dict[str, tuple[EmbeddedChunk, float]] = {}
    for h, score in caption_hits + document_hits:
        cid = h.chunk.chunk_id
        if cid not in merged or score > merged[cid][1]:
            merged[cid] = (h, score)
    consolidated = sorted(merged.values(), key=lambda p: (-p[1], p[0].chunk.chunk_id))

    record = {
        "query": query,
        "routed_sections": sorted(f"{d}#{s}" for d, s in selected),
        "caption_hits": len(caption_hits),
        "document_hits": len(document_hits),
    }
    return EvidenceSet(caption_hits, document_hits, consolidated), record


def _content_words(text: str) -> list[str]:
    words = []
    for token in tokenize(text):
        w = token.lower()
        if w in STOPWORDS or not any(ch.isalnum() for ch in w):
            continue
        if w not in words:
            words.append(w)
    return words


def sufficiency(
    query: str, evidence: EvidenceSet, threshold: float
) -> tuple[bool, str | None]:
    """Sufficient iff top consolidated score meets the threshold AND at least
    half the query's content words appear in the evidence texts. When not,
    propose a refined query by appending up to three new terms from the
    top-scoring chunk."""
    qwords = _content_words(query)
    if evidence.consolidated:
        pool: set[str] = set()
        for h, _ in evidence.consolidated:
            pool.update(_content_words(h.chunk.text))
        coverage = sum(w in pool for w in qwords) / len(qwords) if qwords else 1.0
        score_ok = evidence.top_score is not None and evidence.top_score >= threshold
        if score_ok and coverage >= 0.5:
            return True, None
        top_words = _content_words(evidence.consolidated[0][0].chunk.text)
        extra = [w for w in top_words if w not in qwords][:3]
        refined = f"{query} {' '.join(extra)}" if extra else query
        return False, refined
    return False, query


def render_source_log(ans: GroundedAnswer, evidence_by_id: dict[str, Chunk]) -> str:
    lines = ["Caption Sources:"]
    if ans.caption_sources:
        lines.append(", ".join(ans.caption_sources))
    lines.append("Document Sources:")
    for cid in extract_citations(ans.text):
        c = evidence_by_id.get(cid)
        if c is not None and c.metadata.get("kind") == "document":
            lines.append(f"{c.metadata['source_file']} > Page {c.metadata['page_start']}")
    return "\n".join(lines)


def agentic_answer(
    provider: ChatProvider,
    query: str,
    section_store: VectorStore,
    document_store: VectorStore,
    caption_store: VectorStore,
    params: CascadeParams = CascadeParams(),
) -> tuple[GroundedAnswer, CascadeTrace]:
    """Bounded retrieve-refine loop, then a grounded answer to the original
    query over the final evidence, with the dual source log appended."""
    trace = CascadeTrace()
    current = query
    evidence: EvidenceSet | None = None
    sufficient = False
    for iteration in range(params.max_refinements + 1):
        evidence, record = cascade_retrieve(
            current, section_store, document_store, caption_store, params
        )
        # verdict and refinement are both anchored to the original query:
        # refined queries only widen retrieval, they never lower the bar, so
        # an out-of-corpus query can never talk itself into sufficiency
        sufficient, refined = sufficiency(query, evidence, params.sufficiency_threshold)
        record["sufficient"] = sufficient
        trace.iterations.append(record)
        trace.final_query = current
        if sufficient:
            break
        if iteration < params.max_refinements and refined:
            current = refined

    if not sufficient or evidence is None or not evidence.consolidated:
        raise InsufficientEvidence(
            f"evidence insufficient after {len(trace.iterations)} iterations", trace=trace
        )

    ans = flat_answer(provider, query, evidence.consolidated)
    by_id = {h.chunk.chunk_id: h.chunk for h, _ in evidence.consolidated}
    log = render_source_log(ans, by_id)

    document_sources: list[tuple[str, str]] = []
    for cid in extract_citations(ans.text):
        c = by_id.get(cid)
        if c is not None and c.metadata.get("kind") == "document":
            document_sources.append((c.metadata["source_file"], f"Page {c.metadata['page_start']}"))
    ans.document_sources = document_sources
    ans.text = f"{ans.text}\n\n{log}"
    return ans, trace
