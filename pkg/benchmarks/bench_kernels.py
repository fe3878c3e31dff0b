"""Benchmark the retrieval scoring kernels: numba @njit vs pure numpy.

Builds a synthetic chunk corpus, packs it the same way the index does,
and times BM25 postings scans and cosine count scans on both backends.

    python benchmarks/bench_kernels.py --chunks 20000 --queries 200

The numba backend is also selectable at runtime for the whole engine
via RAGCORE_NUMBA=0|1 (default: numba when importable).
"""

from __future__ import annotations

import argparse
import math
import random
import time

import numpy as np

from ragcore import kernels
from ragcore.embedding import embed_counts


def build_corpus(rng: random.Random, n_chunks: int, vocab_size: int, dim: int):
    vocab_words = [f"w{i:04d}" for i in range(vocab_size)]
    texts = [
        " ".join(rng.choice(vocab_words) for _ in range(rng.randrange(20, 120)))
        for _ in range(n_chunks)
    ]
    token_lists = [t.split() for t in texts]
    doc_lens = np.array([len(ts) for ts in token_lists], dtype=np.float64)
    avgdl = float(doc_lens.mean())

    postings: dict[str, dict[int, int]] = {}
    for i, ts in enumerate(token_lists):
        for t in ts:
            postings.setdefault(t, {}).setdefault(i, 0)
            postings[t][i] += 1
    vocab = {t: tid for tid, t in enumerate(sorted(postings))}
    starts = np.zeros(len(vocab), dtype=np.int64)
    ends = np.zeros(len(vocab), dtype=np.int64)
    rows, tfs = [], []
    idf = np.zeros(len(vocab), dtype=np.float64)
    pos = 0
    for t, tid in vocab.items():
        starts[tid] = pos
        for r, tf in sorted(postings[t].items()):
            rows.append(r)
            tfs.append(float(tf))
            pos += 1
        ends[tid] = pos
        df = ends[tid] - starts[tid]
        idf[tid] = math.log(1.0 + (n_chunks - df + 0.5) / (df + 0.5))

    counts = np.stack([embed_counts(t, dim) for t in texts])
    norms = np.sqrt((counts * counts).sum(axis=1))
    return {
        "vocab": vocab, "vocab_words": vocab_words,
        "starts": starts, "ends": ends,
        "rows": np.array(rows, dtype=np.int64),
        "tfs": np.array(tfs, dtype=np.float64),
        "idf": idf, "doc_lens": doc_lens, "avgdl": avgdl,
        "counts": counts, "norms": norms,
    }


def time_fn(fn, repeats: int) -> float:
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--chunks", type=int, default=20000)
    parser.add_argument("--queries", type=int, default=200)
    parser.add_argument("--vocab", type=int, default=800)
    parser.add_argument("--dim", type=int, default=1024)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    rng = random.Random(1234)
    print(f"building corpus: {args.chunks} chunks, vocab {args.vocab}, dim {args.dim}")
    c = build_corpus(rng, args.chunks, args.vocab, args.dim)

    queries = [
        [c["vocab"][w] for w in rng.sample(c["vocab_words"], rng.randrange(2, 6))
         if w in c["vocab"]]
        for _ in range(args.queries)
    ]
    query_tids = [np.array(q, dtype=np.int64) for q in queries]
    query_counts = [
        embed_counts(" ".join(rng.sample(c["vocab_words"], 4)), args.dim)
        for _ in range(args.queries)
    ]
    query_norms = [float(np.linalg.norm(q)) or 1.0 for q in query_counts]

    def bm25(backend):
        for tids in query_tids:
            backend(tids, c["starts"], c["ends"], c["rows"], c["tfs"],
                    c["idf"], c["doc_lens"], c["avgdl"], 1.2, 0.75)

    def cosine(backend):
        for q, qn in zip(query_counts, query_norms):
            backend(c["counts"], c["norms"], q, qn)

    results = []
    results.append(("bm25", "numpy", time_fn(lambda: bm25(kernels._bm25_scores_np),
                                             args.repeats)))
    results.append(("cosine", "numpy", time_fn(lambda: cosine(kernels._cosine_scores_np),
                                               args.repeats)))
    if kernels.HAS_NUMBA:
        bm25(kernels._bm25_scores_nb)  # JIT warmup outside timing
        cosine(lambda *a: kernels._cosine_scores_nb(*a[:3], float(a[3])))
        results.append(("bm25", "numba", time_fn(lambda: bm25(kernels._bm25_scores_nb),
                                                 args.repeats)))
        results.append(("cosine", "numba",
                        time_fn(lambda: cosine(kernels._cosine_scores_nb), args.repeats)))
    else:
        print("numba unavailable or disabled (RAGCORE_NUMBA=0); numpy only")

    print(f"\n{'kernel':<8} {'backend':<8} {'total s':>9} {'per query us':>14}")
    for kernel, backend, secs in results:
        print(f"{kernel:<8} {backend:<8} {secs:>9.4f} {secs / args.queries * 1e6:>14.1f}")

    by_kernel: dict[str, dict[str, float]] = {}
    for kernel, backend, secs in results:
        by_kernel.setdefault(kernel, {})[backend] = secs
    for kernel, entry in by_kernel.items():
        if {"numpy", "numba"} <= entry.keys():
            print(f"{kernel}: numba speedup x{entry['numpy'] / entry['numba']:.2f}")


if __name__ == "__main__":
    main()
