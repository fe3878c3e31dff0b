"""Word tokenization shared by chunking, lexical search, and metrics.

Tokens are lowercased maximal runs of Unicode alphanumerics. Everything
else, including underscores, acts as a separator. All token budgets in
the engine are counted in these units.
"""

from __future__ import annotations

import re
from importlib import resources

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Split text into lowercase alphanumeric tokens."""
    return _TOKEN_RE.findall(text.lower())


def token_spans(text: str) -> list[tuple[str, int, int]]:
    """Tokens with their [start, end) character offsets in the original text."""
    return [(m.group(0).lower(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def count_tokens(text: str) -> int:
    return sum(1 for _ in _TOKEN_RE.finditer(text))


def _load_stopwords() -> frozenset[str]:
    data = resources.files("ragcore").joinpath("data/stopwords.txt").read_text("utf-8")
    return frozenset(w for w in data.split() if w and not w.startswith("#"))


STOPWORDS: frozenset[str] = _load_stopwords()


def content_tokens(text: str) -> list[str]:
    """Tokens with stopwords removed; duplicates preserved."""
    return [t for t in tokenize(text) if t not in STOPWORDS]
