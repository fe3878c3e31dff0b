"""Both kernel backends against the naive oracle and each other."""

import random

import numpy as np
import pytest

from ragcore import kernels
from ragcore.embedding import embed_counts

from .oracles import bm25_scores_oracle

WORDS = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta",
         "iota", "kappa"]


def pack_corpus(texts: list[str]):
    """Minimal CSR packing mirroring the index layout, built independently."""
    token_lists = [t.lower().split() for t in texts]
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
    import math

    idf = np.zeros(len(vocab), dtype=np.float64)
    pos = 0
    n = len(texts)
    for t, tid in vocab.items():
        starts[tid] = pos
        for r, tf in sorted(postings[t].items()):
            rows.append(r)
            tfs.append(float(tf))
            pos += 1
        ends[tid] = pos
        df = len(postings[t])
        idf[tid] = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
    return vocab, starts, ends, np.array(rows, dtype=np.int64), \
        np.array(tfs, dtype=np.float64), idf, doc_lens, avgdl


BACKENDS = [kernels._bm25_scores_np]
if kernels.HAS_NUMBA:
    BACKENDS.append(kernels._bm25_scores_nb)


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda f: f.__name__)
def test_bm25_backends_match_oracle(backend):
    rng = random.Random(3)
    for _ in range(25):
        texts = [
            " ".join(rng.choice(WORDS) for _ in range(rng.randrange(1, 30)))
            for _ in range(rng.randrange(1, 40))
        ]
        query = " ".join(rng.choice(WORDS) for _ in range(rng.randrange(1, 5)))
        vocab, starts, ends, rows, tfs, idf, doc_lens, avgdl = pack_corpus(texts)
        tids = np.array([vocab[t] for t in query.split() if t in vocab], dtype=np.int64)
        if tids.size == 0:
            continue
        got = backend(tids, starts, ends, rows, tfs, idf, doc_lens, avgdl, 1.2, 0.75)
        expected = bm25_scores_oracle({str(i): t for i, t in enumerate(texts)}, query)
        for i, text in enumerate(texts):
            assert abs(got[i] - expected.get(str(i), 0.0)) < 1e-9


@pytest.mark.skipif(not kernels.HAS_NUMBA, reason="numba disabled")
def test_backends_bit_identical():
    rng = random.Random(11)
    texts = [
        " ".join(rng.choice(WORDS) for _ in range(rng.randrange(1, 50)))
        for _ in range(200)
    ]
    vocab, starts, ends, rows, tfs, idf, doc_lens, avgdl = pack_corpus(texts)
    query = "alpha beta alpha kappa"
    tids = np.array([vocab[t] for t in query.split() if t in vocab], dtype=np.int64)
    a = kernels._bm25_scores_np(tids, starts, ends, rows, tfs, idf, doc_lens, avgdl, 1.2, 0.75)
    b = kernels._bm25_scores_nb(tids, starts, ends, rows, tfs, idf, doc_lens, avgdl, 1.2, 0.75)
    assert np.array_equal(a, b)


def test_cosine_matches_per_row_oracle():
    from .oracles import cosine_oracle, embed_counts_oracle

    rng = random.Random(5)
    texts = [
        " ".join(rng.choice(WORDS) for _ in range(rng.randrange(1, 20)))
        for _ in range(50)
    ]
    counts = np.stack([embed_counts(t, 128) for t in texts])
    norms = np.sqrt((counts * counts).sum(axis=1))
    q = embed_counts("alpha beta", 128)
    qnorm = float(np.linalg.norm(q))
    got = kernels.cosine_scores(counts, norms, q, qnorm)
    for i, text in enumerate(texts):
        expected = cosine_oracle(embed_counts_oracle(text, 128),
                                 embed_counts_oracle("alpha beta", 128))
        assert got[i] == expected, "count-based cosine must be bit-exact"


def test_cosine_backends_bit_identical_and_zero_norm_safe():
    counts = np.array([[1.0, -2.0, 0.0], [0.0, 0.0, 0.0], [3.0, 1.0, 1.0]])
    norms = np.sqrt((counts * counts).sum(axis=1))
    q = np.array([2.0, 1.0, -1.0])
    qnorm = float(np.linalg.norm(q))
    a = kernels._cosine_scores_np(counts, norms, q, qnorm)
    assert a[1] == 0.0  # zero-norm row scores zero, no division blowup
    if kernels.HAS_NUMBA:
        b = kernels._cosine_scores_nb(counts, norms, q, qnorm)
        assert np.array_equal(a, b)


def test_duplicate_query_terms_count_twice():
    texts = ["alpha beta", "beta beta"]
    vocab, starts, ends, rows, tfs, idf, doc_lens, avgdl = pack_corpus(texts)
    single = np.array([vocab["alpha"]], dtype=np.int64)
    double = np.array([vocab["alpha"], vocab["alpha"]], dtype=np.int64)
    s1 = kernels.bm25_scores(single, starts, ends, rows, tfs, idf, doc_lens, avgdl)
    s2 = kernels.bm25_scores(double, starts, ends, rows, tfs, idf, doc_lens, avgdl)
    assert abs(s2[0] - 2 * s1[0]) < 1e-12


def test_warmup_runs():
    kernels.warmup()
