"""Corpus ingestion: parse documents into typed elements and aggregate them
into size-bounded, structure-aware knowledge chunks.

Supported inputs are Markdown (.md), Jupyter notebooks (.ipynb) and Python
source (.py). Notebook outputs are discarded; only source cells are kept.
"""

from __future__ import annotations

import ast
import hashlib
import json
import logging
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

from .errors import ParseFailure, UnsupportedFormat

log = logging.getLogger(__name__)

MIN_CHUNK_CHARS = 500
MAX_CHUNK_CHARS = 8000
SUMMARY_MAX_CHARS = 200

FORMATS = {".md": "markdown", ".ipynb": "notebook", ".py": "python_source"}

ELEMENT_KINDS = (
    "heading",
    "text",
    "code_block",
    "function",
    "class_def",
    "table",
    "list",
    "image_ref",
)

_HEADING_RE = re.compile(r"^(#{1,6})\s+(.+?)\s*#*\s*$")
_FENCE_RE = re.compile(r"^(`{3,}|~{3,})")
_TABLE_ROW_RE = re.compile(r"^\s*\|.*\|\s*$")
_LIST_ITEM_RE = re.compile(r"^\s*(?:[-*+]|\d+[.)])\s+\S")
_IMAGE_RE = re.compile(r"^\s*!\[[^\]]*\]\([^)]*\)\s*$")
_SENTENCE_END_RE = re.compile(r"(?<=[.!?])\s")


@dataclass(frozen=True)
class SourceDocument:
    path: str
    format: str
    raw: str

    @classmethod
    def load(cls, path: str | Path) -> "SourceDocument":
        p = Path(path)
        fmt = FORMATS.get(p.suffix.lower())
        if fmt is None:
            raise UnsupportedFormat(str(p))
        return cls(path=str(p), format=fmt, raw=p.read_text(encoding="utf-8"))


@dataclass(frozen=True)
class DocumentElement:
    kind: str
    content: str
    order: int
    source_path: str
    heading_level: int = 0


@dataclass
class KnowledgeChunk:
    chunk_id: str
    title: str
    content: str
    char_length: int
    word_count: int
    summary: str
    source_path: str
    kind: str  # doc_section | code_unit
    parent_id: Optional[str] = None
    directory_category: str = ""
    unsplittable: bool = False
    split_parent: bool = False  # container kept only as the PART_OF target


def _chunk_id(source_path: str, ordinal: int, content: str) -> str:
    digest = hashlib.sha1(
        f"{source_path}\x00{ordinal}\x00{content}".encode("utf-8")
    ).hexdigest()
    return digest[:16]


def _summarize(content: str) -> str:
    first = content.strip().split("\n", 1)[0]
    parts = _SENTENCE_END_RE.split(content.strip(), maxsplit=1)
    if parts and parts[0]:
        first = parts[0].split("\n", 1)[0] or first
    return first[:SUMMARY_MAX_CHARS]


def make_chunk(
    content: str,
    title: str,
    source_path: str,
    kind: str,
    ordinal: int,
    parent_id: Optional[str] = None,
    directory_category: str = "",
) -> KnowledgeChunk:
    return KnowledgeChunk(
        chunk_id=_chunk_id(source_path, ordinal, content),
        title=title,
        content=content,
        char_length=len(content),
        word_count=len(content.split()),
        summary=_summarize(content),
        source_path=source_path,
        kind=kind,
        parent_id=parent_id,
        directory_category=directory_category,
    )


# ---------------------------------------------------------------------------
# Markdown parsing
# ---------------------------------------------------------------------------

def _parse_markdown(text: str, source_path: str, start_order: int = 0) -> List[DocumentElement]:
    elements: List[DocumentElement] = []
    order = start_order
    lines = text.split("\n")
    para: List[str] = []

    def flush_para() -> None:
        nonlocal order
        body = "\n".join(para).strip()
        para.clear()
        if body:
            elements.append(DocumentElement("text", body, order, source_path))
            order += 1

    i = 0
    while i < len(lines):
        line = lines[i]
        stripped = line.strip()

        fence = _FENCE_RE.match(stripped)
        if fence:
            flush_para()
            marker = fence.group(1)[0] * 3
            body: List[str] = []
            i += 1
            while i < len(lines) and not lines[i].strip().startswith(marker):
                body.append(lines[i])
                i += 1
            i += 1  # skip closing fence (or run past EOF on unterminated block)
            elements.append(
                DocumentElement("code_block", "\n".join(body).strip("\n"), order, source_path)
            )
            order += 1
            continue

        heading = _HEADING_RE.match(line)
        if heading:
            flush_para()
            elements.append(
                DocumentElement(
                    "heading",
                    heading.group(2).strip(),
                    order,
                    source_path,
                    heading_level=len(heading.group(1)),
                )
            )
            order += 1
            i += 1
            continue

        if _TABLE_ROW_RE.match(line):
            flush_para()
            rows = []
            while i < len(lines) and _TABLE_ROW_RE.match(lines[i]):
                rows.append(lines[i].strip())
                i += 1
            elements.append(DocumentElement("table", "\n".join(rows), order, source_path))
            order += 1
            continue

        if _LIST_ITEM_RE.match(line):
            flush_para()
            items = []
            while i < len(lines) and (
                _LIST_ITEM_RE.match(lines[i]) or (items and lines[i].startswith(("  ", "\t")))
            ):
                items.append(lines[i].rstrip())
                i += 1
            elements.append(DocumentElement("list", "\n".join(items), order, source_path))
            order += 1
            continue

        if _IMAGE_RE.match(line):
            flush_para()
            elements.append(DocumentElement("image_ref", stripped, order, source_path))
            order += 1
            i += 1
            continue

        if not stripped:
            flush_para()
            i += 1
            continue

        para.append(line)
        i += 1

    flush_para()
    return elements


# ---------------------------------------------------------------------------
# Notebook parsing
# ---------------------------------------------------------------------------

def _cell_source(cell: dict) -> str:
    src = cell.get("source", "")
    if isinstance(src, list):
        return "".join(src)
    return str(src)


def _parse_notebook(raw: str, source_path: str) -> List[DocumentElement]:
    try:
        nb = json.loads(raw)
        cells = nb["cells"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParseFailure(source_path, f"not a notebook container: {exc}") from exc

    elements: List[DocumentElement] = []
    for cell in cells:
        kind = cell.get("cell_type")
        body = _cell_source(cell).strip("\n")
        if not body.strip():
            continue
        if kind == "markdown":
            parsed = _parse_markdown(body, source_path, start_order=len(elements))
            elements.extend(parsed)
        elif kind == "code":
            elements.append(
                DocumentElement("code_block", body, len(elements), source_path)
            )
        # raw cells and outputs are dropped: nondeterministic noise
    return [replace(el, order=i) for i, el in enumerate(elements)]


# ---------------------------------------------------------------------------
# Python source parsing
# ---------------------------------------------------------------------------

def _parse_python(raw: str, source_path: str) -> List[DocumentElement]:
    try:
        tree = ast.parse(raw)
    except SyntaxError:
        # keep broken files retrievable as one opaque block
        log.warning("python parse failed for %s; keeping whole file", source_path)
        return [DocumentElement("code_block", raw.strip("\n"), 0, source_path)]

    lines = raw.split("\n")
    elements: List[DocumentElement] = []
    covered: set[int] = set()

    def segment(node: ast.stmt) -> str:
        start = node.lineno - 1
        if node.decorator_list:
            start = node.decorator_list[0].lineno - 1
        end = node.end_lineno or node.lineno
        covered.update(range(start, end))
        return "\n".join(lines[start:end]).strip("\n")

    defs: List[tuple[int, DocumentElement]] = []
    for node in tree.body:
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            defs.append((node.lineno, DocumentElement("function", segment(node), 0, source_path)))
        elif isinstance(node, ast.ClassDef):
            defs.append((node.lineno, DocumentElement("class_def", segment(node), 0, source_path)))

    # module docstring becomes text; remaining top-level statements group into
    # contiguous code blocks between the extracted definitions
    doc = ast.get_docstring(tree)
    doc_el: Optional[tuple[int, DocumentElement]] = None
    if doc and tree.body and isinstance(tree.body[0], ast.Expr):
        first = tree.body[0]
        covered.update(range(first.lineno - 1, first.end_lineno or first.lineno))
        doc_el = (first.lineno, DocumentElement("text", doc.strip(), 0, source_path))

    blocks: List[tuple[int, DocumentElement]] = []
    current: List[str] = []
    block_start = 0
    for idx, line in enumerate(lines):
        if idx in covered or not line.strip():
            if current:
                blocks.append(
                    (block_start + 1,
                     DocumentElement("code_block", "\n".join(current).strip("\n"), 0, source_path))
                )
                current = []
        else:
            if not current:
                block_start = idx
            current.append(line)
    if current:
        blocks.append(
            (block_start + 1,
             DocumentElement("code_block", "\n".join(current).strip("\n"), 0, source_path))
        )

    merged = sorted(defs + blocks + ([doc_el] if doc_el else []), key=lambda t: t[0])
    return [replace(el, order=i) for i, (_, el) in enumerate(merged)]


def parse_document(doc: SourceDocument) -> List[DocumentElement]:
    """Parse one document into its ordered element stream."""
    if doc.format not in FORMATS.values():
        raise UnsupportedFormat(doc.path)
    if not doc.raw.strip():
        return []
    if doc.format == "markdown":
        return _parse_markdown(doc.raw, doc.path)
    if doc.format == "notebook":
        return _parse_notebook(doc.raw, doc.path)
    return _parse_python(doc.raw, doc.path)


# ---------------------------------------------------------------------------
# Chunk building
# ---------------------------------------------------------------------------

def _symbol_name(code: str) -> str:
    m = re.search(r"^\s*(?:async\s+)?(?:def|class)\s+([A-Za-z_]\w*)", code, re.MULTILINE)
    return m.group(1) if m else "code"


def _element_kind_is_code_unit(el: DocumentElement) -> bool:
    return el.kind in ("function", "class_def")


@dataclass
class _Section:
    title: str
    heading_text: Optional[str]  # None for preambles and code units
    bodies: List[str]
    kind: str

    def content_parts(self, inline_heading: bool) -> List[str]:
        parts: List[str] = []
        if inline_heading and self.heading_text:
            parts.append(self.heading_text)
        parts.extend(self.bodies)
        return parts


def build_chunks(
    elements: Sequence[DocumentElement],
    directory_category: str = "",
) -> List[KnowledgeChunk]:
    """Aggregate one document's elements into chunks.

    Doc formats group a heading with the content that follows it (the
    heading becomes the chunk title); Python sources group per
    function/class. Sections below the minimum size merge forward, with
    absorbed headings inlined into content so nothing is lost. Documents
    under 500 chars total stay a single undersized chunk.
    """
    if not elements:
        return []
    source_path = elements[0].source_path
    is_code_doc = any(_element_kind_is_code_unit(el) for el in elements) and not any(
        el.kind == "heading" for el in elements
    )
    default_kind = "code_unit" if is_code_doc else "doc_section"

    sections: List[_Section] = []
    current: Optional[_Section] = None

    for el in elements:
        if el.kind == "heading":
            if current is not None:
                sections.append(current)
            current = _Section(el.content, el.content, [], "doc_section")
        elif is_code_doc and _element_kind_is_code_unit(el):
            if current is not None:
                sections.append(current)
            current = _Section(_symbol_name(el.content), None, [el.content], "code_unit")
        else:
            if current is None:
                current = _Section(Path(source_path).stem, None, [], default_kind)
            current.bodies.append(el.content)
    if current is not None:
        sections.append(current)

    total_chars = sum(len(b) for s in sections for b in s.bodies) + sum(
        len(s.heading_text or "") for s in sections
    )

    # merge undersized sections forward; absorbed sections keep their
    # heading text inline so coverage is preserved
    groups: List[List[_Section]] = []
    for section in sections:
        if groups and _group_length(groups[-1]) < MIN_CHUNK_CHARS:
            groups[-1].append(section)
        else:
            groups.append([section])
    if len(groups) > 1 and _group_length(groups[-1]) < MIN_CHUNK_CHARS:
        tail = groups.pop()
        groups[-1].extend(tail)

    if total_chars < MIN_CHUNK_CHARS and len(groups) > 1:
        groups = [[s for g in groups for s in g]]

    chunks: List[KnowledgeChunk] = []
    for ordinal, group in enumerate(groups):
        parts: List[str] = []
        for i, section in enumerate(group):
            parts.extend(section.content_parts(inline_heading=i > 0))
        content = "\n\n".join(parts)
        chunks.append(
            make_chunk(
                content,
                group[0].title,
                source_path,
                group[0].kind,
                ordinal,
                directory_category=directory_category,
            )
        )
    return chunks


def _group_length(group: List[_Section]) -> int:
    parts: List[str] = []
    for i, section in enumerate(group):
        parts.extend(section.content_parts(inline_heading=i > 0))
    return len("\n\n".join(parts))


# ---------------------------------------------------------------------------
# Oversized chunk splitting
# ---------------------------------------------------------------------------

def _split_points(content: str, kind: str) -> List[int]:
    """Legal boundary offsets: blank lines and sentence ends for prose,
    top-level statement starts (column-zero lines) for code, so no sentence
    or function body is ever cut."""
    points: set[int] = set()
    if kind == "code_unit":
        for m in re.finditer(r"\n(?=\S)", content):
            points.add(m.start() + 1)
    else:
        for m in re.finditer(r"\n\s*\n", content):
            points.add(m.end())
        for m in _SENTENCE_END_RE.finditer(content):
            points.add(m.end())
    points.discard(0)
    points.discard(len(content))
    return sorted(points)


def split_oversized(chunk: KnowledgeChunk, max_len: int = MAX_CHUNK_CHARS) -> List[KnowledgeChunk]:
    """Split an oversized chunk at semantically natural boundaries.

    Pieces are balanced toward total/ceil(total/max_len) chars, each in
    [MIN_CHUNK_CHARS, max_len]. When no legal boundary allows that, the
    chunk is kept whole and flagged unsplittable.
    """
    if chunk.char_length <= max_len:
        return [chunk]

    content = chunk.content
    points = _split_points(content, chunk.kind)
    n_pieces = math.ceil(len(content) / max_len)
    target = len(content) / n_pieces

    pieces: List[str] = []
    start = 0
    ok = True
    while len(content) - start > max_len:
        candidates = [p for p in points if MIN_CHUNK_CHARS <= p - start <= max_len]
        if not candidates:
            ok = False
            break
        cut = min(candidates, key=lambda p: abs((p - start) - target))
        # never leave an undersized tail if we can help it
        remaining = len(content) - cut
        if remaining < MIN_CHUNK_CHARS:
            wider = [p for p in candidates if len(content) - p >= MIN_CHUNK_CHARS]
            if wider:
                cut = min(wider, key=lambda p: abs((p - start) - target))
            else:
                ok = False
                break
        pieces.append(content[start:cut])
        start = cut
    if ok:
        pieces.append(content[start:])

    if not ok or any(not (MIN_CHUNK_CHARS <= len(p) <= max_len) for p in pieces):
        log.warning("chunk %s has no legal split boundaries; kept whole", chunk.chunk_id)
        flagged = replace(chunk)
        flagged.unsplittable = True
        return [flagged]

    out: List[KnowledgeChunk] = []
    for i, piece in enumerate(pieces):
        sub = make_chunk(
            piece.strip("\n"),
            f"{chunk.title} ({i + 1})",
            chunk.source_path,
            chunk.kind,
            ordinal=i,
            parent_id=chunk.chunk_id,
            directory_category=chunk.directory_category,
        )
        out.append(sub)
    return out


# ---------------------------------------------------------------------------
# Corpus-level driver
# ---------------------------------------------------------------------------

def ingest_file(path: str | Path, corpus_root: Optional[str | Path] = None) -> List[KnowledgeChunk]:
    """Parse + chunk + split one file.

    When a chunk is split, the oversized original is retained (flagged
    ``split_parent``) so child ``parent_id`` references and PART_OF edges
    resolve; only leaf chunks enter the retrieval surface.
    """
    doc = SourceDocument.load(path)
    elements = parse_document(doc)
    category = ""
    if corpus_root is not None:
        rel = Path(path).resolve().relative_to(Path(corpus_root).resolve())
        category = rel.parts[0] if len(rel.parts) > 1 else ""
    chunks = build_chunks(elements, directory_category=category)
    final: List[KnowledgeChunk] = []
    for chunk in chunks:
        split = split_oversized(chunk)
        if len(split) > 1:
            chunk.split_parent = True
            final.append(chunk)
        final.extend(split)
    return final


def ingest_corpus(root: str | Path) -> List[KnowledgeChunk]:
    root = Path(root)
    chunks: List[KnowledgeChunk] = []
    paths = sorted(p for p in root.rglob("*") if p.suffix.lower() in FORMATS)
    for path in paths:
        try:
            chunks.extend(ingest_file(path, corpus_root=root))
        except ParseFailure as exc:
            log.warning("skipping %s: %s", path, exc)
    return chunks
