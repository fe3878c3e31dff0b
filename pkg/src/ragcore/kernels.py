"""Scoring kernels for the retrieval hot path.

Two interchangeable backends compute identical results:

* ``numba``: @njit-compiled loops (default when numba imports cleanly)
* ``numpy``: vectorized fallback

Set ``RAGCORE_NUMBA=0`` to force the numpy path. Both backends keep the
same floating-point operation order per chunk so scores are bit-stable
across backends. ``benchmarks/bench_kernels.py`` compares the two.
"""

from __future__ import annotations

import os

import numpy as np

_flag = os.environ.get("RAGCORE_NUMBA", "1").strip().lower()
_want_numba = _flag not in ("0", "false", "no", "off")

try:
    if _want_numba:
        from numba import njit
    else:
        njit = None
except ImportError:  # pragma: no cover
    njit = None

HAS_NUMBA = njit is not None
BACKEND = "numba" if HAS_NUMBA else "numpy"


def _bm25_scores_py(query_tids, starts, ends, post_rows, post_tfs,
                    idf, doc_lens, avgdl, k1, b):
    n = doc_lens.shape[0]
    scores = np.zeros(n, dtype=np.float64)
    for qi in range(query_tids.shape[0]):
        t = query_tids[qi]
        w = idf[t]
        for p in range(starts[t], ends[t]):
            r = post_rows[p]
            tf = post_tfs[p]
            denom = tf + k1 * (1.0 - b + b * doc_lens[r] / avgdl)
            scores[r] += w * (tf * (k1 + 1.0)) / denom
    return scores


def _bm25_scores_np(query_tids, starts, ends, post_rows, post_tfs,
                    idf, doc_lens, avgdl, k1, b):
    scores = np.zeros(doc_lens.shape[0], dtype=np.float64)
    for t in query_tids:
        sl = slice(starts[t], ends[t])
        rows = post_rows[sl]
        tf = post_tfs[sl]
        denom = tf + k1 * (1.0 - b + b * doc_lens[rows] / avgdl)
        # rows are unique within one term's postings, so += is safe
        scores[rows] += idf[t] * (tf * (k1 + 1.0)) / denom
    return scores


def _cosine_scores_py(emb_counts, row_norms, query_counts, query_norm):
    n = emb_counts.shape[0]
    d = emb_counts.shape[1]
    scores = np.zeros(n, dtype=np.float64)
    for i in range(n):
        if row_norms[i] == 0.0:
            continue
        dot = 0.0
        for j in range(d):
            dot += emb_counts[i, j] * query_counts[j]  # exact integer sums
        scores[i] = dot / (row_norms[i] * query_norm)
    return scores


def _cosine_scores_np(emb_counts, row_norms, query_counts, query_norm):
    dots = emb_counts @ query_counts
    scores = np.zeros(emb_counts.shape[0], dtype=np.float64)
    nz = row_norms > 0.0
    scores[nz] = dots[nz] / (row_norms[nz] * query_norm)
    return scores


if HAS_NUMBA:
    _bm25_scores_nb = njit(cache=True)(_bm25_scores_py)
    _cosine_scores_nb = njit(cache=True)(_cosine_scores_py)


def bm25_scores(query_tids, starts, ends, post_rows, post_tfs,
                idf, doc_lens, avgdl, k1=1.2, b=0.75):
    """BM25 score of every chunk row for the given query term ids."""
    args = (query_tids, starts, ends, post_rows, post_tfs,
            idf, doc_lens, float(avgdl), float(k1), float(b))
    if HAS_NUMBA:
        return _bm25_scores_nb(*args)
    return _bm25_scores_np(*args)


def cosine_scores(emb_counts, row_norms, query_counts, query_norm):
    """Cosine of every count row against the query's count vector.

    Inputs are unnormalized signed counts plus precomputed L2 norms; the
    dot products are exact, so both backends produce identical bytes.
    """
    if HAS_NUMBA:
        return _cosine_scores_nb(emb_counts, row_norms, query_counts, float(query_norm))
    return _cosine_scores_np(emb_counts, row_norms, query_counts, float(query_norm))


def warmup():
    """Trigger JIT compilation with tiny inputs (no-op on the numpy path)."""
    tids = np.zeros(1, dtype=np.int64)
    starts = np.zeros(1, dtype=np.int64)
    ends = np.ones(1, dtype=np.int64)
    rows = np.zeros(1, dtype=np.int64)
    tfs = np.ones(1, dtype=np.float64)
    idf = np.ones(1, dtype=np.float64)
    lens = np.ones(1, dtype=np.float64)
    bm25_scores(tids, starts, ends, rows, tfs, idf, lens, 1.0)
    cosine_scores(np.ones((1, 4)), np.full(1, 2.0), np.ones(4), 2.0)
