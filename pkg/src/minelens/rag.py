"""Retrieval core: span tokenizer, boundary-snapping chunker, hashed test
embedder, exact-cosine vector store, and grounded closed-domain answers.

Chunk text is always a verbatim slice of the source document, so token spans
stay honest under retokenization. Vectors are quantized to float32 at insert
time; the on-disk record format is therefore bit-identical to memory and a
reload can never change search results.
"""

from __future__ import annotations

import hashlib
import json
import re
import string
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from string import Template
from typing import Callable, NamedTuple, Protocol

import numpy as np

from .errors import (
    ConfigError,
    EmbedderMismatch,
    InsufficientEvidence,
    MetadataMissing,
    UngroundedCitation,
)
from .providers import ChatProvider, ChatRequest

DEFAULT_CHUNK_SIZE = 150
DEFAULT_OVERLAP = 30
_PUNCT = set(string.punctuation)
_CITATION = re.compile(r"\[src:([^\]\s]+)\]")


class Token(NamedTuple):
    text: str
    start: int  # char offset into the source text
    end: int


def tokenize_spans(text: str) -> list[Token]:
    """Whitespace split with edge punctuation peeled into single-char tokens.

    Peeling looks only at a word's own edges, so slicing the source at any
    token boundary and retokenizing reproduces the same token run.
    """
    tokens: list[Token] = []
    i = 0
    n = len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        j = i
        while j < n and not text[j].isspace():
            j += 1
        lo, hi = i, j
        while lo < hi and text[lo] in _PUNCT:
            tokens.append(Token(text[lo], lo, lo + 1))
            lo += 1
        trailing: list[Token] = []
        while hi > lo and text[hi - 1] in _PUNCT:
            trailing.append(Token(text[hi - 1], hi - 1, hi))
            hi -= 1
        if lo < hi:
            tokens.append(Token(text[lo:hi], lo, hi))
        tokens.extend(reversed(trailing))
        i = j
    return tokens


def tokenize(text: str) -> list[str]:
    return [t.text for t in tokenize_spans(text)]


@dataclass
class Chunk:
    chunk_id: str
    doc_id: str
    text: str
    token_span: tuple[int, int]
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "doc_id": self.doc_id,
            "text": self.text,
            "token_span": list(self.token_span),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Chunk":
        return cls(
            chunk_id=doc["chunk_id"],
            doc_id=doc["doc_id"],
            text=doc["text"],
            token_span=tuple(doc["token_span"]),
            metadata=dict(doc.get("metadata", {})),
        )


# ------------------------------------------------------------------ chunking

# gap classes, coarsest first; a chunk prefers to end at the coarsest
# boundary available inside its window
_BLANK_LINE = 3
_NEWLINE = 2
_SENTENCE = 1
_SPACE = 0


def _gap_classes(text: str, tokens: list[Token]) -> list[int]:
    """Class of the boundary before token i (index 0 unused)."""
    classes = [_SPACE] * (len(tokens) + 1)
    for i in range(1, len(tokens)):
        gap = text[tokens[i - 1].end : tokens[i].start]
        if gap.count("\n") >= 2:
            classes[i] = _BLANK_LINE
        elif "\n" in gap:
            classes[i] = _NEWLINE
        elif tokens[i - 1].text in {".", "!", "?"}:
            classes[i] = _SENTENCE
        else:
            classes[i] = _SPACE
    return classes


def chunk(
    text: str,
    doc_id: str,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    overlap: int = DEFAULT_OVERLAP,
    *,
    metadata: dict | None = None,
) -> list[Chunk]:
    """Windows of at most chunk_size tokens ending at the coarsest boundary
    in range; consecutive spans overlap by exactly `overlap` tokens."""
    if not 0 <= overlap < chunk_size:
        raise ConfigError("overlap must satisfy 0 <= overlap < chunk_size")
    tokens = tokenize_spans(text)
    if not tokens:
        return []
    classes = _gap_classes(text, tokens)

    chunks: list[Chunk] = []
    start = 0
    n = len(tokens)
    while True:
        hard_end = start + chunk_size
        if hard_end >= n:
            end = n
        else:
            # admissible cut points keep the next window advancing
            lo, hi = start + overlap + 1, hard_end
            best_class = max(classes[lo : hi + 1], default=_SPACE)
            end = hard_end
            if best_class > _SPACE:
                for i in range(hi, lo - 1, -1):
                    if classes[i] == best_class:
                        end = i
                        break
        span_text = text[tokens[start].start : tokens[end - 1].end]
        chunks.append(
            Chunk(
                chunk_id=f"{doc_id}:{start}-{end}",
                doc_id=doc_id,
                text=span_text,
                token_span=(start, end),
                metadata=dict(metadata or {}),
            )
        )
        if end >= n:
            return chunks
        start = end - overlap


def prepend_metadata(c: Chunk) -> Chunk:
    """Discoverability prefix: site identity for caption chunks, file name
    for document chunks. Idempotent; spans keep referring to the source."""
    md = c.metadata
    if md.get("kind") == "caption":
        missing = [k for k in ("mine_name", "country", "lat", "lon") if k not in md]
        if missing:
            raise MetadataMissing(f"caption chunk {c.chunk_id} lacks {missing}")
        prefix = f"[{md['mine_name']} | {md['country']} | {md['lat']:.2f},{md['lon']:.2f}] "
    elif "source_file" in md:
        prefix = f"[{md['source_file']}] "
    else:
        raise MetadataMissing(f"chunk {c.chunk_id} has neither site identity nor source_file")
    if c.text.startswith(prefix):
        return c
    return Chunk(
        chunk_id=c.chunk_id,
        doc_id=c.doc_id,
        text=prefix + c.text,
        token_span=c.token_span,
        metadata=dict(md),
    )


# ----------------------------------------------------------------- embedding


class Embedder(Protocol):
    identity: str
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


class HashedBagEmbedder:
    """Deterministic bag-of-tokens embedding for offline use: each token adds
    one count at its sha256-hashed coordinate; the result is unit-normalized.
    Empty text maps to the first basis vector."""

    def __init__(self, dimension: int = 256):
        self.dimension = dimension
        self.identity = f"hashed-bag-{dimension}:v1"

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension, dtype=np.float64)
        for token in tokenize(text):
            digest = hashlib.sha256(token.lower().encode()).digest()
            vec[int.from_bytes(digest[:4], "little") % self.dimension] += 1.0
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            vec[0] = 1.0
            return vec
        return vec / norm


class HttpEmbedder:
    """Adapter for hosted embedding APIs; identity pins model + dimension so a
    store can refuse queries embedded with anything else."""

    def __init__(self, url: str, key: str, model: str, dimension: int):
        import requests

        self.url = url
        self._key = key
        self.model = model
        self.dimension = dimension
        self.identity = f"http:{model}:{dimension}"
        self._session = requests.Session()

    def embed(self, text: str) -> np.ndarray:
        resp = self._session.post(
            self.url,
            json={"model": self.model, "input": text},
            headers={"Authorization": f"Bearer {self._key}"},
            timeout=60,
        )
        resp.raise_for_status()
        vec = np.asarray(resp.json()["data"][0]["embedding"], dtype=np.float64)
        norm = float(np.linalg.norm(vec))
        return vec / norm if norm else vec


@dataclass
class EmbeddedChunk:
    chunk: Chunk
    vector: np.ndarray


# -------------------------------------------------------------- vector store


class VectorStore:
    """Exact full-scan cosine store. Insertion quantizes vectors to float32
    so memory and the on-disk format agree bit for bit."""

    FORMAT_VERSION = "1"

    def __init__(self, name: str, embedder: Embedder):
        self.name = name
        self.embedder = embedder
        self.dimension = embedder.dimension
        self._chunks: list[Chunk] = []
        self._vectors: list[np.ndarray] = []
        self._by_id: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self._chunks)

    def chunk_ids(self) -> list[str]:
        return [c.chunk_id for c in self._chunks]

    def get(self, chunk_id: str) -> Chunk:
        return self._chunks[self._by_id[chunk_id]]

    @staticmethod
    def _quantize(vector: np.ndarray) -> np.ndarray:
        return vector.astype(np.float32).astype(np.float64)

    def add(self, c: Chunk, vector: np.ndarray) -> None:
        if c.chunk_id in self._by_id:
            raise ValueError(f"duplicate chunk_id {c.chunk_id!r}")
        if vector.shape != (self.dimension,):
            raise ValueError(f"vector dimension {vector.shape} != {self.dimension}")
        self._by_id[c.chunk_id] = len(self._chunks)
        self._chunks.append(c)
        self._vectors.append(self._quantize(vector))

    def upsert(self, c: Chunk, vector: np.ndarray) -> bool:
        """Returns True when the chunk was new."""
        idx = self._by_id.get(c.chunk_id)
        if idx is None:
            self.add(c, vector)
            return True
        self._chunks[idx] = c
        self._vectors[idx] = self._quantize(vector)
        return False

    def add_text(self, c: Chunk) -> None:
        self.add(c, self.embedder.embed(c.text))

    def search(
        self,
        query: str,
        k: int,
        *,
        flt: Callable[[Chunk], bool] | None = None,
        embedder: Embedder | None = None,
    ) -> list[tuple[EmbeddedChunk, float]]:
        active = embedder or self.embedder
        if active.identity != self.embedder.identity:
            raise EmbedderMismatch(
                f"store embedded with {self.embedder.identity}, query uses {active.identity}"
            )
        if not self._chunks:
            return []
        q = active.embed(query)
        qn = float(np.linalg.norm(q))
        scored = []
        for c, v in zip(self._chunks, self._vectors):
            if flt is not None and not flt(c):
                continue
            denom = qn * float(np.linalg.norm(v))
            score = float(np.dot(q, v) / denom) if denom else 0.0
            scored.append((EmbeddedChunk(chunk=c, vector=v), score))
        scored.sort(key=lambda pair: (-pair[1], pair[0].chunk.chunk_id))
        return scored[:k]

    # persistence: manifest points at immutable content-named data files, so
    # replacing the manifest is the single commit point
    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        records = "\n".join(json.dumps(c.to_dict(), sort_keys=True) for c in self._chunks)
        if records:
            records += "\n"
        matrix = (
            np.stack(self._vectors).astype("<f4")
            if self._vectors
            else np.zeros((0, self.dimension), dtype="<f4")
        )
        vec_bytes = matrix.tobytes()
        tag = hashlib.sha256(records.encode() + vec_bytes).hexdigest()[:12]
        records_name = f"records-{tag}.jsonl"
        vectors_name = f"vectors-{tag}.f32"
        (directory / records_name).write_bytes(records.encode())
        (directory / vectors_name).write_bytes(vec_bytes)
        manifest = {
            "format_version": self.FORMAT_VERSION,
            "name": self.name,
            "embedder": self.embedder.identity,
            "dimension": self.dimension,
            "count": len(self._chunks),
            "records": records_name,
            "vectors": vectors_name,
        }
        tmp = directory / "manifest.json.tmp"
        tmp.write_text(json.dumps(manifest, indent=2))
        tmp.replace(directory / "manifest.json")
        for stale in directory.glob("records-*.jsonl"):
            if stale.name != records_name:
                stale.unlink()
        for stale in directory.glob("vectors-*.f32"):
            if stale.name != vectors_name:
                stale.unlink()

    @classmethod
    def load(cls, directory: str | Path, embedder: Embedder) -> "VectorStore":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        if manifest["embedder"] != embedder.identity:
            raise EmbedderMismatch(
                f"store embedded with {manifest['embedder']}, loader has {embedder.identity}"
            )
        store = cls(name=manifest["name"], embedder=embedder)
        store.dimension = int(manifest["dimension"])
        raw = (directory / manifest["vectors"]).read_bytes()
        matrix = np.frombuffer(raw, dtype="<f4").reshape(manifest["count"], store.dimension)
        lines = (directory / manifest["records"]).read_text().splitlines()
        for line, row in zip(lines, matrix):
            c = Chunk.from_dict(json.loads(line))
            store._by_id[c.chunk_id] = len(store._chunks)
            store._chunks.append(c)
            # float32 on disk; keep the float64 cast bit-faithful, no renorm
            store._vectors.append(row.astype(np.float64))
        if len(store._chunks) != manifest["count"]:
            raise ValueError("store record count disagrees with manifest")
        return store


# ------------------------------------------------------------------- answers


@dataclass
class GroundedAnswer:
    text: str
    caption_sources: list[str]
    document_sources: list[tuple[str, str]]  # (file, "Page N" or section id)
    evidence: list[Chunk]

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "caption_sources": list(self.caption_sources),
            "document_sources": [list(p) for p in self.document_sources],
            "evidence": [c.to_dict() for c in self.evidence],
        }


def extract_citations(text: str) -> list[str]:
    seen: list[str] = []
    for cid in _CITATION.findall(text):
        if cid not in seen:
            seen.append(cid)
    return seen


def answer(
    provider: ChatProvider,
    query: str,
    hits: list[tuple[EmbeddedChunk, float]],
) -> GroundedAnswer:
    """Closed-domain answer over the hits; every citation must point into the
    evidence or the whole answer is rejected."""
    if not hits:
        raise InsufficientEvidence("no retrieved evidence for query")
    evidence = [h.chunk for h, _ in hits]
    context = "\n\n".join(f"[src:{c.chunk_id}] {c.text}" for c in evidence)
    template = resources.files("minelens.data").joinpath("prompts/rag_answer.txt").read_text()
    user = Template(template).substitute(context=context, query=query)
    text = provider.complete(
        ChatRequest(system="Answer strictly from the provided context.", user=user)
    )

    by_id = {c.chunk_id: c for c in evidence}
    cited = extract_citations(text)
    unknown = [cid for cid in cited if cid not in by_id]
    if unknown:
        raise UngroundedCitation(unknown)

    caption_sources: list[str] = []
    document_sources: list[tuple[str, str]] = []
    for cid in cited:
        md = by_id[cid].metadata
        if md.get("kind") == "caption":
            site = md.get("site_id", by_id[cid].doc_id)
            if site not in caption_sources:
                caption_sources.append(site)
        else:
            document_sources.append(
                (md.get("source_file", by_id[cid].doc_id), md.get("parent_section_id", ""))
            )
    return GroundedAnswer(
        text=text,
        caption_sources=caption_sources,
        document_sources=document_sources,
        evidence=evidence,
    )
