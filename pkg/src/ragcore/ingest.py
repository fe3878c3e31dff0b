"""Document parsing, metadata enrichment, and token-window chunking.

Documents arrive as plain text, markdown, or HTML. Parsing yields a
heading outline (sections partition the body by character range), and
chunking slices the token sequence into overlapping windows, either
across the whole document or independently per section. Chunks inherit
the document's ACL and sensitivity unchanged; retrieval enforces them.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import IntEnum
from html.parser import HTMLParser

from .errors import ConfigInvalid, EmptyAcl, UnsupportedFormat
from .tokens import STOPWORDS, token_spans, tokenize

EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)

FORMATS = ("plain", "markdown", "html")


class Sensitivity(IntEnum):
    """Ordered sensitivity labels; retrieval requires clearance >= label."""

    public = 0
    internal = 1
    confidential = 2
    restricted = 3

    @classmethod
    def parse(cls, value) -> "Sensitivity":
        if isinstance(value, Sensitivity):
            return value
        if isinstance(value, bool):
            raise ValueError(f"invalid sensitivity: {value!r}")
        if isinstance(value, int):
            return cls(value)
        if isinstance(value, str):
            try:
                return cls[value.strip().lower()]
            except KeyError:
                raise ValueError(f"invalid sensitivity: {value!r}") from None
        raise ValueError(f"invalid sensitivity: {value!r}")


@dataclass(frozen=True)
class Section:
    """A heading-delimited slice of the document body.

    ``path`` is the heading trail down to this section (empty for the
    implicit root section before any heading). Ranges of sibling
    sections never overlap and appear in document order.
    """

    path: tuple[str, ...]
    char_start: int
    char_end: int
    level: int = 1


@dataclass(frozen=True)
class Document:
    doc_id: str
    uri: str
    title: str
    body: str
    format: str
    sections: tuple[Section, ...]
    acl: frozenset[str]
    sensitivity: Sensitivity
    modified_at: datetime = EPOCH
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ChunkingConfig:
    chunk_tokens: int = 96
    overlap_tokens: int = 16
    mode: str = "sliding"  # sliding | section_aware
    prepend_section_path: bool = False

    def validate(self) -> None:
        if self.chunk_tokens <= 0:
            raise ConfigInvalid(f"chunk_tokens must be > 0, got {self.chunk_tokens}")
        if self.overlap_tokens < 0:
            raise ConfigInvalid(f"overlap_tokens must be >= 0, got {self.overlap_tokens}")
        if self.overlap_tokens >= self.chunk_tokens:
            raise ConfigInvalid(
                f"overlap_tokens ({self.overlap_tokens}) must be smaller than "
                f"chunk_tokens ({self.chunk_tokens})"
            )
        if self.mode not in ("sliding", "section_aware"):
            raise ConfigInvalid(f"unknown chunking mode: {self.mode!r}")


@dataclass(frozen=True)
class Chunk:
    """A token window of one document, carrying the document's labels.

    ``token_start``/``token_end`` index the document's token sequence and
    never count the optional section-path prefix added to ``text``.
    """

    chunk_id: str
    doc_id: str
    ordinal: int
    text: str
    token_start: int
    token_end: int
    section_path: tuple[str, ...]
    acl: frozenset[str]
    sensitivity: Sensitivity
    metadata: dict
    uri: str = ""


_MD_HEADING = re.compile(r"^(#{1,6})[ \t]+(.+?)[ \t]*#*[ \t]*$")


def _sections_from_headings(
    body: str, headings: list[tuple[int, int, str]]
) -> tuple[Section, ...]:
    """Build the section partition from (level, body_offset, title) triples."""
    sections: list[Section] = []
    if not body:
        return ()
    if not headings:
        return (Section(path=(), char_start=0, char_end=len(body), level=1),)
    if headings[0][1] > 0:
        sections.append(Section(path=(), char_start=0, char_end=headings[0][1], level=1))
    stack: list[tuple[int, str]] = []
    for i, (level, start, title) in enumerate(headings):
        while stack and stack[-1][0] >= level:
            stack.pop()
        stack.append((level, title))
        end = headings[i + 1][1] if i + 1 < len(headings) else len(body)
        if start < end:
            sections.append(
                Section(
                    path=tuple(t for _, t in stack),
                    char_start=start,
                    char_end=end,
                    level=level,
                )
            )
    return tuple(sections)


def _parse_markdown(body: str) -> tuple[tuple[Section, ...], str | None]:
    headings: list[tuple[int, int, str]] = []
    offset = 0
    for line in body.splitlines(keepends=True):
        m = _MD_HEADING.match(line.rstrip("\r\n"))
        if m:
            headings.append((len(m.group(1)), offset, m.group(2)))
        offset += len(line)
    title = headings[0][2] if headings else None
    return _sections_from_headings(body, headings), title


_BLOCK_TAGS = {
    "p", "div", "section", "article", "header", "footer", "li", "ul", "ol",
    "table", "tr", "blockquote", "pre", "h1", "h2", "h3", "h4", "h5", "h6",
}
_H_LEVELS = {"h1": 1, "h2": 2, "h3": 3, "h4": 4, "h5": 5, "h6": 6}


class _HtmlTextExtractor(HTMLParser):
    """Strips tags, keeping text content and h1..h6 positions."""

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.parts: list[str] = []
        self.length = 0
        self.headings: list[tuple[int, int, str]] = []
        self._skip_depth = 0
        self._heading: tuple[int, int, list[str]] | None = None

    def _emit(self, text: str) -> None:
        if not text:
            return
        self.parts.append(text)
        self.length += len(text)
        if self._heading is not None:
            self._heading[2].append(text)

    def _break_line(self) -> None:
        if self.parts and not self.parts[-1].endswith("\n"):
            self.parts.append("\n")
            self.length += 1

    def handle_starttag(self, tag, attrs):
        if tag in ("script", "style"):
            self._skip_depth += 1
            return
        if tag in _H_LEVELS and self._heading is None:
            self._break_line()
            self._heading = (_H_LEVELS[tag], self.length, [])
        elif tag == "br":
            self._break_line()

    def handle_endtag(self, tag):
        if tag in ("script", "style"):
            self._skip_depth = max(0, self._skip_depth - 1)
            return
        if tag in _H_LEVELS and self._heading is not None:
            level, start, texts = self._heading
            self.headings.append((level, start, " ".join("".join(texts).split())))
            self._heading = None
        if tag in _BLOCK_TAGS:
            self._break_line()

    def handle_data(self, data):
        if self._skip_depth == 0:
            self._emit(data)

    def body_text(self) -> str:
        return "".join(self.parts)


def _parse_html(raw: str) -> tuple[str, tuple[Section, ...], str | None]:
    extractor = _HtmlTextExtractor()
    extractor.feed(raw)
    extractor.close()
    body = extractor.body_text()
    sections = _sections_from_headings(body, extractor.headings)
    title = extractor.headings[0][2] if extractor.headings else None
    return body, sections, title


def _uri_tail(uri: str) -> str:
    tail = uri.rstrip("/").rsplit("/", 1)[-1]
    return tail or uri


def parse_document(
    raw: str,
    format: str,
    uri: str,
    acl: set[str] | frozenset[str],
    sensitivity: Sensitivity | str | int,
    doc_id: str | None = None,
    modified_at: datetime = EPOCH,
) -> Document:
    """Parse raw content into a Document with a section outline.

    Raises UnsupportedFormat for formats outside plain/markdown/html and
    EmptyAcl when no access group is given (documents are never silently
    treated as public).
    """
    if format not in FORMATS:
        raise UnsupportedFormat(f"unsupported document format: {format!r}")
    acl = frozenset(acl)
    if not acl:
        raise EmptyAcl(f"document {doc_id or uri!r} has an empty ACL")
    sensitivity = Sensitivity.parse(sensitivity)

    title: str | None = None
    if format == "plain":
        body = raw
        sections = (
            (Section(path=(), char_start=0, char_end=len(body), level=1),) if body else ()
        )
    elif format == "markdown":
        body = raw
        sections, title = _parse_markdown(body)
    else:
        body, sections, title = _parse_html(raw)

    return Document(
        doc_id=doc_id or _uri_tail(uri),
        uri=uri,
        title=title if title else _uri_tail(uri),
        body=body,
        format=format,
        sections=sections,
        acl=acl,
        sensitivity=sensitivity,
        modified_at=modified_at,
        metadata={},
    )


def enrich_metadata(doc: Document) -> Document:
    """Add derived metadata keys: keywords, heading_terms, doc_title.

    Keywords are the ten most frequent non-stopword body tokens, ties
    broken alphabetically. Re-running the enrichment is a no-op.
    """
    counts = Counter(t for t in tokenize(doc.body) if t not in STOPWORDS)
    keywords = [t for t, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:10]]
    heading_terms = sorted({t for s in doc.sections for part in s.path for t in tokenize(part)})
    metadata = dict(doc.metadata)
    metadata["keywords"] = ",".join(keywords)
    metadata["heading_terms"] = ",".join(heading_terms)
    metadata["doc_title"] = doc.title
    return replace(doc, metadata=metadata)


def _windows(lo: int, hi: int, chunk_tokens: int, stride: int):
    """Token windows starting at lo; the window that reaches hi is clipped."""
    start = lo
    while start < hi:
        end = start + chunk_tokens
        if end >= hi:
            yield start, hi
            return
        yield start, end
        start += stride


def chunk_document(doc: Document, cfg: ChunkingConfig) -> list[Chunk]:
    """Slice a document into token-window chunks under the given config.

    Sliding mode windows the whole token sequence; section_aware mode
    windows each section's token span independently so no chunk crosses
    a section boundary. Every document token lands in at least one chunk.
    """
    cfg.validate()
    spans = token_spans(doc.body)
    n = len(spans)
    if n == 0:
        return []
    stride = cfg.chunk_tokens - cfg.overlap_tokens

    # Token index ranges to window over, each with its section path.
    if cfg.mode == "section_aware" and doc.sections:
        ranges: list[tuple[int, int, tuple[str, ...]]] = []
        tok = 0
        for sec in doc.sections:
            lo = tok
            while tok < n and spans[tok][1] < sec.char_end:
                tok += 1
            ranges.append((lo, tok, sec.path))
        if tok < n:  # tokens beyond the last section boundary
            ranges.append((tok, n, ()))
    else:
        ranges = [(0, n, _section_path_at(doc, spans[0][1]))]

    chunks: list[Chunk] = []
    ordinal = 0
    for lo, hi, path in ranges:
        for start, end in _windows(lo, hi, cfg.chunk_tokens, stride):
            text = doc.body[spans[start][1] : spans[end - 1][2]]
            if cfg.mode == "sliding":
                path = _section_path_at(doc, spans[start][1])
            if cfg.prepend_section_path and path:
                text = " > ".join(path) + ": " + text
            chunks.append(
                Chunk(
                    chunk_id=f"{doc.doc_id}#{ordinal:04d}",
                    doc_id=doc.doc_id,
                    ordinal=ordinal,
                    text=text,
                    token_start=start,
                    token_end=end,
                    section_path=path,
                    acl=doc.acl,
                    sensitivity=doc.sensitivity,
                    metadata=dict(doc.metadata),
                    uri=doc.uri,
                )
            )
            ordinal += 1
    return chunks


def _section_path_at(doc: Document, char_offset: int) -> tuple[str, ...]:
    for sec in doc.sections:
        if sec.char_start <= char_offset < sec.char_end:
            return sec.path
    return ()


def ingest_document(
    raw: str,
    format: str,
    uri: str,
    acl: set[str],
    sensitivity,
    cfg: ChunkingConfig,
    doc_id: str | None = None,
    modified_at: datetime = EPOCH,
) -> tuple[Document, list[Chunk]]:
    """parse -> enrich -> chunk as one deterministic step."""
    doc = enrich_metadata(
        parse_document(raw, format, uri, acl, sensitivity, doc_id=doc_id, modified_at=modified_at)
    )
    return doc, chunk_document(doc, cfg)


MANIFEST_FIELDS = ("doc_id", "uri", "format", "acl", "sensitivity", "body")


def parse_manifest(lines, source: str = "<manifest>") -> list[Document]:
    """Parse a JSONL corpus manifest into Documents.

    Each line holds one object with doc_id, uri, format, acl, sensitivity,
    modified_at (optional ISO timestamp), and body. Problems raise
    ConfigInvalid naming the line and field.
    """
    docs: list[Document] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise ConfigInvalid(f"{source}:{lineno}: invalid JSON: {e}") from None
        if not isinstance(record, dict):
            raise ConfigInvalid(f"{source}:{lineno}: expected an object")
        for fieldname in MANIFEST_FIELDS:
            if fieldname not in record:
                raise ConfigInvalid(f"{source}:{lineno}: missing field {fieldname!r}")
        doc_id = record["doc_id"]
        if not doc_id or not isinstance(doc_id, str):
            raise ConfigInvalid(f"{source}:{lineno}: doc_id must be a non-empty string")
        if doc_id in seen:
            raise ConfigInvalid(f"{source}:{lineno}: duplicate doc_id {doc_id!r}")
        seen.add(doc_id)
        modified_at = EPOCH
        if record.get("modified_at"):
            try:
                modified_at = datetime.fromisoformat(str(record["modified_at"]).replace("Z", "+00:00"))
            except ValueError:
                raise ConfigInvalid(f"{source}:{lineno}: modified_at is not an ISO timestamp") from None
        try:
            doc = parse_document(
                record["body"],
                record["format"],
                record["uri"],
                set(record["acl"]),
                record["sensitivity"],
                doc_id=doc_id,
                modified_at=modified_at,
            )
        except (UnsupportedFormat, EmptyAcl, ValueError) as e:
            raise ConfigInvalid(f"{source}:{lineno}: {e}") from None
        docs.append(doc)
    return docs


def load_manifest(path) -> list[Document]:
    with open(path, encoding="utf-8") as f:
        return parse_manifest(f, source=str(path))
