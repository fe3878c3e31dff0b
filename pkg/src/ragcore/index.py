"""Hybrid lexical + vector index with access control inside retrieval.

BM25 (k1=1.2, b=0.75, non-negative idf) and cosine-over-embeddings run
as exact full scans at desk scale, fused with reciprocal rank fusion.
ACL and sensitivity filters apply before top-k truncation, so a chunk
the caller may not read can never displace one they may.

Mutations (upsert/delete) invalidate a packed snapshot that is rebuilt
lazily on the next search; in-flight searches keep the snapshot they
started with, so readers see whole documents appear or disappear, never
a mix.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .embedding import DEFAULT_DIM, embed_counts
from .ingest import Chunk, Sensitivity
from .tokens import tokenize

RRF_K = 60
CANDIDATE_MULTIPLIER = 4

BM25_K1 = 1.2
BM25_B = 0.75

SNAPSHOT_HEADER = "header.json"
SNAPSHOT_SEGMENT = "chunks.jsonl"


@dataclass(frozen=True)
class Principal:
    """The identity a search runs as."""

    user_id: str
    groups: frozenset[str] = frozenset()
    clearance: Sensitivity = Sensitivity.internal


@dataclass
class ScoredHit:
    chunk_id: str
    doc_id: str
    fused_score: float
    lexical_score: float | None = None
    lexical_rank: int | None = None
    vector_score: float | None = None
    vector_rank: int | None = None
    chunk: Chunk | None = None


@dataclass
class _Packed:
    """Immutable scan arrays; rows are ordered by chunk_id ascending."""

    rows: list[Chunk]
    doc_lens: np.ndarray
    avgdl: float
    vocab: dict[str, int]
    starts: np.ndarray
    ends: np.ndarray
    post_rows: np.ndarray
    post_tfs: np.ndarray
    idf: np.ndarray
    emb_counts: np.ndarray
    emb_norms: np.ndarray
    sens: np.ndarray
    acls: list[frozenset[str]]

    @property
    def n(self) -> int:
        return len(self.rows)

    def permitted_mask(self, principal: Principal) -> np.ndarray:
        groups = principal.groups
        clearance = int(principal.clearance)
        mask = np.empty(self.n, dtype=bool)
        for i in range(self.n):
            mask[i] = self.sens[i] <= clearance and bool(self.acls[i] & groups)
        return mask


class HybridIndex:
    """Both retrieval structures over one chunk collection."""

    def __init__(self, dim: int = DEFAULT_DIM):
        self.dim = dim
        self._lock = threading.RLock()
        self._docs: dict[str, list[Chunk]] = {}
        self._packed: _Packed | None = None

    # -- mutation ---------------------------------------------------------

    def upsert_chunks(self, chunks: list[Chunk]) -> int:
        """Index chunks, replacing any prior chunks of the same documents."""
        by_doc: dict[str, list[Chunk]] = {}
        for c in chunks:
            by_doc.setdefault(c.doc_id, []).append(c)
        with self._lock:
            for doc_id, doc_chunks in by_doc.items():
                self._docs[doc_id] = sorted(doc_chunks, key=lambda c: c.chunk_id)
            self._packed = None
        return len(chunks)

    def delete_document(self, doc_id: str) -> int:
        with self._lock:
            removed = len(self._docs.pop(doc_id, []))
            if removed:
                self._packed = None
        return removed

    def stats(self) -> dict:
        with self._lock:
            return {
                "documents": len(self._docs),
                "chunks": sum(len(v) for v in self._docs.values()),
            }

    # -- snapshot ---------------------------------------------------------

    def _snapshot(self) -> _Packed:
        with self._lock:
            if self._packed is None:
                self._packed = self._pack()
            return self._packed

    def _pack(self) -> _Packed:
        rows = sorted(
            (c for doc_chunks in self._docs.values() for c in doc_chunks),
            key=lambda c: c.chunk_id,
        )
        n = len(rows)
        token_lists = [tokenize(c.text) for c in rows]
        doc_lens = np.array([len(ts) for ts in token_lists], dtype=np.float64)
        avgdl = float(doc_lens.mean()) if n else 0.0

        postings: dict[str, dict[int, int]] = {}
        for i, ts in enumerate(token_lists):
            for t in ts:
                postings.setdefault(t, {})
                postings[t][i] = postings[t].get(i, 0) + 1
        vocab = {t: tid for tid, t in enumerate(sorted(postings))}

        starts = np.zeros(len(vocab), dtype=np.int64)
        ends = np.zeros(len(vocab), dtype=np.int64)
        rows_flat: list[int] = []
        tfs_flat: list[float] = []
        idf = np.zeros(len(vocab), dtype=np.float64)
        pos = 0
        for t, tid in vocab.items():
            term_rows = sorted(postings[t].items())
            starts[tid] = pos
            for r, tf in term_rows:
                rows_flat.append(r)
                tfs_flat.append(float(tf))
                pos += 1
            ends[tid] = pos
            df = len(term_rows)
            idf[tid] = math.log(1.0 + (n - df + 0.5) / (df + 0.5))

        emb_counts = np.zeros((n, self.dim), dtype=np.float64)
        for i, c in enumerate(rows):
            emb_counts[i] = embed_counts(c.text, self.dim)
        emb_norms = np.sqrt((emb_counts * emb_counts).sum(axis=1))

        return _Packed(
            rows=rows,
            doc_lens=doc_lens,
            avgdl=avgdl,
            vocab=vocab,
            starts=starts,
            ends=ends,
            post_rows=np.array(rows_flat, dtype=np.int64),
            post_tfs=np.array(tfs_flat, dtype=np.float64),
            idf=idf,
            emb_counts=emb_counts,
            emb_norms=emb_norms,
            sens=np.array([int(c.sensitivity) for c in rows], dtype=np.int64),
            acls=[c.acl for c in rows],
        )

    # -- search -----------------------------------------------------------

    def lexical_search(self, query: str, k: int, principal: Principal) -> list[ScoredHit]:
        """BM25 top-k over chunks the principal may read."""
        if k < 1:
            raise ValueError("k must be >= 1")
        snap = self._snapshot()
        if snap.n == 0:
            return []
        qtokens = tokenize(query)
        tids = np.array([snap.vocab[t] for t in qtokens if t in snap.vocab], dtype=np.int64)
        if tids.size == 0:
            return []
        scores = kernels.bm25_scores(
            tids, snap.starts, snap.ends, snap.post_rows, snap.post_tfs,
            snap.idf, snap.doc_lens, snap.avgdl, BM25_K1, BM25_B,
        )
        mask = snap.permitted_mask(principal)
        hits: list[ScoredHit] = []
        for r in np.argsort(-scores, kind="stable"):
            if scores[r] <= 0.0:
                break
            if not mask[r]:
                continue
            rank = len(hits) + 1
            c = snap.rows[r]
            hits.append(ScoredHit(
                chunk_id=c.chunk_id, doc_id=c.doc_id,
                fused_score=1.0 / (RRF_K + rank),
                lexical_score=float(scores[r]), lexical_rank=rank, chunk=c,
            ))
            if len(hits) == k:
                break
        return hits

    def vector_search(self, query: str, k: int, principal: Principal) -> list[ScoredHit]:
        """Cosine top-k over chunks the principal may read."""
        if k < 1:
            raise ValueError("k must be >= 1")
        snap = self._snapshot()
        if snap.n == 0:
            return []
        qcounts = embed_counts(query, self.dim)
        qnorm = float(np.linalg.norm(qcounts))
        if qnorm == 0.0:
            return []
        scores = kernels.cosine_scores(snap.emb_counts, snap.emb_norms, qcounts, qnorm)
        mask = snap.permitted_mask(principal)
        hits: list[ScoredHit] = []
        for r in np.argsort(-scores, kind="stable"):
            if not mask[r]:
                continue
            rank = len(hits) + 1
            c = snap.rows[r]
            hits.append(ScoredHit(
                chunk_id=c.chunk_id, doc_id=c.doc_id,
                fused_score=1.0 / (RRF_K + rank),
                vector_score=float(scores[r]), vector_rank=rank, chunk=c,
            ))
            if len(hits) == k:
                break
        return hits

    def hybrid_search(
        self, query: str, k: int, principal: Principal, fusion: str = "rrf"
    ) -> list[ScoredHit]:
        """Reciprocal-rank fusion of both retrievers (or either one alone)."""
        if k < 1:
            raise ValueError("k must be >= 1")
        if fusion == "lexical":
            return self.lexical_search(query, k, principal)
        if fusion == "vector":
            return self.vector_search(query, k, principal)
        if fusion != "rrf":
            raise ValueError(f"unknown fusion mode: {fusion!r}")

        depth = CANDIDATE_MULTIPLIER * k
        fused = rrf_fuse(
            self.lexical_search(query, depth, principal),
            self.vector_search(query, depth, principal),
        )
        return fused[:k]

    # -- persistence ------------------------------------------------------

    def save(self, directory) -> None:
        """Write the chunk segment and stats header for later reload."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        stats = self.stats()
        with self._lock:
            chunks = [c for doc in self._docs.values() for c in doc]
        with open(directory / SNAPSHOT_SEGMENT, "w", encoding="utf-8") as f:
            for c in sorted(chunks, key=lambda c: c.chunk_id):
                f.write(json.dumps(_chunk_to_record(c), sort_keys=True) + "\n")
        header = {
            "format_version": 1,
            "dimension": self.dim,
            "documents": stats["documents"],
            "chunks": stats["chunks"],
        }
        (directory / SNAPSHOT_HEADER).write_text(json.dumps(header, indent=2) + "\n")

    @classmethod
    def load(cls, directory) -> "HybridIndex":
        directory = Path(directory)
        header = json.loads((directory / SNAPSHOT_HEADER).read_text())
        index = cls(dim=int(header["dimension"]))
        with open(directory / SNAPSHOT_SEGMENT, encoding="utf-8") as f:
            chunks = [_chunk_from_record(json.loads(line)) for line in f if line.strip()]
        if chunks:
            index.upsert_chunks(chunks)
        return index


def rrf_score(*ranks: int | None, k: int = RRF_K) -> float:
    """Sum of 1/(k + rank) over the ranks that are present."""
    return sum(1.0 / (k + r) for r in ranks if r is not None)


def rrf_fuse(lexical_hits: list[ScoredHit], vector_hits: list[ScoredHit]) -> list[ScoredHit]:
    """Merge two ranked lists by reciprocal rank fusion.

    A chunk in both lists sums both reciprocal terms; fused order is
    score-descending with chunk_id breaking ties.
    """
    merged: dict[str, ScoredHit] = {}
    for hit in lexical_hits:
        merged[hit.chunk_id] = hit
    for vhit in vector_hits:
        hit = merged.get(vhit.chunk_id)
        if hit is None:
            merged[vhit.chunk_id] = vhit
        else:
            hit.vector_score = vhit.vector_score
            hit.vector_rank = vhit.vector_rank
    for hit in merged.values():
        hit.fused_score = rrf_score(hit.lexical_rank, hit.vector_rank)
    return sorted(merged.values(), key=lambda h: (-h.fused_score, h.chunk_id))


def _chunk_to_record(c: Chunk) -> dict:
    return {
        "chunk_id": c.chunk_id,
        "doc_id": c.doc_id,
        "ordinal": c.ordinal,
        "text": c.text,
        "token_start": c.token_start,
        "token_end": c.token_end,
        "section_path": list(c.section_path),
        "acl": sorted(c.acl),
        "sensitivity": int(c.sensitivity),
        "metadata": c.metadata,
        "uri": c.uri,
    }


def _chunk_from_record(rec: dict) -> Chunk:
    return Chunk(
        chunk_id=rec["chunk_id"],
        doc_id=rec["doc_id"],
        ordinal=rec["ordinal"],
        text=rec["text"],
        token_start=rec["token_start"],
        token_end=rec["token_end"],
        section_path=tuple(rec["section_path"]),
        acl=frozenset(rec["acl"]),
        sensitivity=Sensitivity(rec["sensitivity"]),
        metadata=rec["metadata"],
        uri=rec.get("uri", ""),
    )
