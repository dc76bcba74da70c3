"""Canonical document model and chunk assembly.

A parsed document arrives as a bundle: ordered pages, each holding ordered
layout elements. Text elements are concatenated into one token stream per
document and cut into fixed-size overlapping windows; figure and table
elements become standalone image chunks carrying their caption text.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Callable

from .errors import ConfigurationError, InputError

TEXT_KINDS = ("paragraph", "title", "equation")
IMAGE_KINDS = ("figure", "table")
ELEMENT_KINDS = TEXT_KINDS + IMAGE_KINDS

TokenizerFn = Callable[[str], list]


@dataclass(frozen=True)
class Element:
    """One layout element on a page."""

    kind: str
    text: str | None = None
    image_ref: str | None = None
    ocr_text: str | None = None


@dataclass(frozen=True)
class Page:
    page_index: int
    elements: tuple[Element, ...] = ()
    render_ref: str | None = None


@dataclass(frozen=True)
class DocumentBundle:
    doc_id: str
    pages: tuple[Page, ...] = ()
    source_meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Chunk:
    """A retrieval unit: either a text window or a single visual element."""

    chunk_id: str
    doc_id: str
    modality: str  # "text" | "image"
    content_type: str  # "paragraph" | "figure" | "table" | "equation"
    text_content: str
    image_ref: str | None
    page_indices: tuple[int, ...]
    span: tuple[int, int] | None  # token offsets in the document stream, text only


@dataclass(frozen=True)
class ChunkingConfig:
    max_window: int = 1200
    overlap: int = 100
    tokenizer_id: str = "simple"

    def validate(self) -> None:
        if self.max_window <= 0:
            raise ConfigurationError("max_window must be positive")
        if not 0 <= self.overlap < self.max_window:
            raise ConfigurationError("overlap must satisfy 0 <= overlap < max_window")
        if self.tokenizer_id not in _TOKENIZERS:
            raise ConfigurationError(f"unknown tokenizer_id: {self.tokenizer_id!r}")


# ---------------------------------------------------------------------------
# tokenizers

def _simple_tokenize(text: str) -> list[str]:
    # words and individual punctuation marks; whitespace never survives
    return re.findall(r"\w+|[^\w\s]", text)


_TOKENIZERS: dict[str, TokenizerFn] = {"simple": _simple_tokenize}


def register_tokenizer(tokenizer_id: str, fn: TokenizerFn) -> None:
    """Register a segmentation function under an id usable in ChunkingConfig."""
    _TOKENIZERS[tokenizer_id] = fn


def tokenize(text: str, tokenizer_id: str = "simple") -> list[str]:
    try:
        fn = _TOKENIZERS[tokenizer_id]
    except KeyError:
        raise ConfigurationError(f"unknown tokenizer_id: {tokenizer_id!r}") from None
    return fn(text)


# ---------------------------------------------------------------------------
# windowing

def segment_text(tokens: list, cfg: ChunkingConfig) -> list[tuple[int, int]]:
    """Cut a token stream into overlapping windows.

    Consecutive windows share exactly ``cfg.overlap`` tokens; the last window
    always ends at the final token. An empty stream yields no windows.
    """
    cfg.validate()
    n = len(tokens)
    if n == 0:
        return []
    stride = cfg.max_window - cfg.overlap
    starts = [0]
    while starts[-1] + cfg.max_window < n:
        starts.append(starts[-1] + stride)
    return [(s, min(s + cfg.max_window, n)) for s in starts]


# ---------------------------------------------------------------------------
# bundle validation

def validate_bundle(raw: dict) -> DocumentBundle:
    """Check a raw bundle dict against the canonical schema and freeze it."""
    if not isinstance(raw, dict):
        raise InputError("bundle must be a JSON object")
    doc_id = raw.get("doc_id")
    if not isinstance(doc_id, str) or not doc_id:
        raise InputError("bundle.doc_id must be a non-empty string")
    meta = raw.get("source_meta", {})
    if not isinstance(meta, dict):
        raise InputError("bundle.source_meta must be an object")
    pages_raw = raw.get("pages", [])
    if not isinstance(pages_raw, list):
        raise InputError("bundle.pages must be an array")

    pages = []
    for pos, p in enumerate(pages_raw):
        if not isinstance(p, dict):
            raise InputError(f"page at position {pos} must be an object")
        idx = p.get("page_index")
        if idx != pos:
            raise InputError(
                f"page_index must be 0-based and contiguous, got {idx!r} at position {pos}"
            )
        render = p.get("render_ref")
        if render is not None and not isinstance(render, str):
            raise InputError(f"page {pos} render_ref must be a string")
        elements = []
        for e_pos, e in enumerate(p.get("elements", [])):
            elements.append(_validate_element(e, pos, e_pos))
        pages.append(Page(page_index=pos, elements=tuple(elements), render_ref=render))
    return DocumentBundle(doc_id=doc_id, pages=tuple(pages), source_meta=dict(meta))


def _validate_element(e, page_idx: int, e_pos: int) -> Element:
    where = f"page {page_idx} element {e_pos}"
    if not isinstance(e, dict):
        raise InputError(f"{where}: element must be an object")
    kind = e.get("kind")
    if kind not in ELEMENT_KINDS:
        raise InputError(f"{where}: unknown element kind {kind!r}")
    text = e.get("text")
    image_ref = e.get("image_ref")
    ocr_text = e.get("ocr_text")
    for name, val in (("text", text), ("image_ref", image_ref), ("ocr_text", ocr_text)):
        if val is not None and not isinstance(val, str):
            raise InputError(f"{where}: {name} must be a string")
    if kind in TEXT_KINDS:
        if image_ref is not None:
            raise InputError(f"{where}: {kind} elements must not carry image_ref")
    else:
        if not image_ref:
            raise InputError(f"{where}: {kind} elements require image_ref")
    return Element(kind=kind, text=text, image_ref=image_ref, ocr_text=ocr_text)


def bundle_to_dict(bundle: DocumentBundle) -> dict:
    """Serialize a bundle back to its canonical JSON shape."""
    return {
        "doc_id": bundle.doc_id,
        "source_meta": dict(bundle.source_meta),
        "pages": [
            {
                "page_index": p.page_index,
                "render_ref": p.render_ref,
                "elements": [
                    {
                        "kind": e.kind,
                        "text": e.text,
                        "image_ref": e.image_ref,
                        "ocr_text": e.ocr_text,
                    }
                    for e in p.elements
                ],
            }
            for p in bundle.pages
        ],
    }


def load_bundle(path: str) -> DocumentBundle:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"bundle file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"bundle file is not valid JSON: {exc}") from None
    return validate_bundle(raw)


# ---------------------------------------------------------------------------
# chunk assembly

def assemble_chunks(bundle: DocumentBundle, cfg: ChunkingConfig) -> list[Chunk]:
    """Turn one bundle into its chunk list.

    Text chunks come first, one per window over the document's concatenated
    text stream, then one image chunk per figure or table element in layout
    order. Chunk ids are ``doc_id + "-" + ordinal`` and stable across runs.
    """
    cfg.validate()
    stream: list[str] = []
    token_pages: list[int] = []
    visuals: list[tuple[int, Element]] = []

    for page in bundle.pages:
        for element in page.elements:
            if element.kind in TEXT_KINDS:
                if element.text:
                    toks = tokenize(element.text, cfg.tokenizer_id)
                    stream.extend(toks)
                    token_pages.extend([page.page_index] * len(toks))
            else:
                visuals.append((page.page_index, element))

    chunks: list[Chunk] = []
    ordinal = 0
    for start, end in segment_text(stream, cfg):
        pages = tuple(sorted(set(token_pages[start:end])))
        chunks.append(
            Chunk(
                chunk_id=f"{bundle.doc_id}-{ordinal}",
                doc_id=bundle.doc_id,
                modality="text",
                content_type="paragraph",
                text_content=" ".join(stream[start:end]),
                image_ref=None,
                page_indices=pages,
                span=(start, end),
            )
        )
        ordinal += 1

    for page_index, element in visuals:
        caption = element.text or ""
        if element.ocr_text:
            # tables keep recognized cell markup next to the caption
            caption = f"{caption}\n{element.ocr_text}" if caption else element.ocr_text
        chunks.append(
            Chunk(
                chunk_id=f"{bundle.doc_id}-{ordinal}",
                doc_id=bundle.doc_id,
                modality="image",
                content_type=element.kind,
                text_content=caption,
                image_ref=element.image_ref,
                page_indices=(page_index,),
                span=None,
            )
        )
        ordinal += 1
    return chunks


def chunk_to_dict(chunk: Chunk) -> dict:
    return {
        "chunk_id": chunk.chunk_id,
        "doc_id": chunk.doc_id,
        "modality": chunk.modality,
        "content_type": chunk.content_type,
        "text_content": chunk.text_content,
        "image_ref": chunk.image_ref,
        "page_indices": list(chunk.page_indices),
        "span": list(chunk.span) if chunk.span is not None else None,
    }


def chunk_from_dict(raw: dict) -> Chunk:
    try:
        span = raw["span"]
        return Chunk(
            chunk_id=raw["chunk_id"],
            doc_id=raw["doc_id"],
            modality=raw["modality"],
            content_type=raw["content_type"],
            text_content=raw["text_content"],
            image_ref=raw.get("image_ref"),
            page_indices=tuple(raw["page_indices"]),
            span=tuple(span) if span is not None else None,
        )
    except KeyError as exc:
        raise InputError(f"chunk record missing field {exc}") from None
