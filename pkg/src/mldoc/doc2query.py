"""Synthetic query generation over chunks.

Each chunk is sent to a vision-language model which proposes queries the
chunk can answer, together with exact answers. Parsed pairs become query
nodes anchored to their source chunk; the node text used for embedding is
a configurable projection of the pair.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, replace
from typing import Sequence

from .corpus import Chunk, Page
from .errors import ConfigurationError, GenerationParseError, InputError, ProtocolError
from .gateway import ChatMessage, Embedding, ImagePart, TextPart
from .prompts import PROMPT_VERSION, get_prompt

log = logging.getLogger(__name__)

MODE_CHUNK = "chunk_only"
MODE_PAGE = "page_context"

REPR_QA = "query_plus_answer"
REPR_Q = "query_only"
REPR_A = "answer_only"
REPRS = (REPR_QA, REPR_Q, REPR_A)

# wire-level level strings mapped to canonical names; unknown values drop to None
LEVELS = {
    "level_1_entity_integrated": "entity_integrated",
    "level_2_detailed_content": "detailed_content",
    "level_3_macro_hierarchy": "macro_hierarchy",
    "level_4_context_restoration": "context_restoration",
}


@dataclass(frozen=True)
class QueryNode:
    query_id: str
    chunk_id: str
    query_text: str
    answer_text: str
    level: str | None = None
    embedding: Embedding | None = None


@dataclass(frozen=True)
class GenerationConfig:
    mode: str = MODE_CHUNK
    max_pairs: int = 20
    repr: str = REPR_QA
    prompt_version: str = PROMPT_VERSION

    def validate(self) -> None:
        if self.mode not in (MODE_CHUNK, MODE_PAGE):
            raise ConfigurationError(f"unknown generation mode: {self.mode!r}")
        if self.max_pairs < 1:
            raise ConfigurationError("max_pairs must be at least 1")
        if self.repr not in REPRS:
            raise ConfigurationError(f"unknown node representation: {self.repr!r}")


def build_generation_request(
    chunk: Chunk,
    page: Page | None,
    cfg: GenerationConfig,
    page_render_path: str | None = None,
) -> list[ChatMessage]:
    """Compose the chat messages for one chunk.

    Chunk-only mode sends just the chunk content. Page-context mode labels
    the chunk as the target and attaches the page render, which must exist.
    """
    cfg.validate()
    if cfg.mode == MODE_CHUNK:
        system = get_prompt("doc2query", cfg.prompt_version)
        parts: list = []
        if chunk.modality == "image":
            parts.append(ImagePart(chunk.image_ref))
            parts.append(TextPart(chunk.text_content))
        else:
            parts.append(TextPart(chunk.text_content))
        return [
            ChatMessage(role="system", parts=(TextPart(system),)),
            ChatMessage(role="user", parts=tuple(parts)),
        ]

    if page is None or page_render_path is None:
        raise ConfigurationError(
            f"page_context generation for {chunk.chunk_id} requires the page and its render"
        )
    system = get_prompt("doc2query_page", cfg.prompt_version)
    parts = [TextPart(f"Target Chunk:\n{chunk.text_content}")]
    if chunk.modality == "image":
        parts.append(ImagePart(chunk.image_ref))
    parts.append(TextPart("Source Page Image:"))
    parts.append(ImagePart(page_render_path))
    return [
        ChatMessage(role="system", parts=(TextPart(system),)),
        ChatMessage(role="user", parts=tuple(parts)),
    ]


def _first_json_array(raw: str):
    """Return the first JSON array parseable from raw model output."""
    decoder = json.JSONDecoder()
    for match in re.finditer(r"\[", raw):
        try:
            value, _ = decoder.raw_decode(raw, match.start())
        except ValueError:
            continue
        if isinstance(value, list):
            return value
    return None


def parse_generation_response(raw: str, chunk_id: str, cfg: GenerationConfig) -> list[QueryNode]:
    """Extract query nodes from model output.

    Tolerates code fences and surrounding prose; the first JSON array wins.
    Items need non-empty "query" and "answer" strings. Exact duplicate
    pairs collapse before the max_pairs cap is applied; node ids are the
    chunk id plus the local index in the emitted order.
    """
    cfg.validate()
    array = _first_json_array(raw)
    if array is None:
        raise GenerationParseError(f"no JSON array in model output for {chunk_id}", raw=raw)

    seen: set[tuple[str, str]] = set()
    nodes: list[QueryNode] = []
    for item in array:
        if not isinstance(item, dict):
            continue
        query = item.get("query")
        answer = item.get("answer")
        if not isinstance(query, str) or not isinstance(answer, str):
            continue
        query, answer = query.strip(), answer.strip()
        if not query or not answer:
            continue
        key = (query, answer)
        if key in seen:
            continue
        seen.add(key)
        level = None
        if cfg.mode == MODE_PAGE:
            level = LEVELS.get(item.get("level"))
        nodes.append(
            QueryNode(
                query_id=f"{chunk_id}-{len(nodes)}",
                chunk_id=chunk_id,
                query_text=query,
                answer_text=answer,
                level=level,
            )
        )
        if len(nodes) >= cfg.max_pairs:
            break

    if not nodes:
        raise GenerationParseError(f"no valid query/answer items for {chunk_id}", raw=raw)
    return nodes


def generate_queries_for_chunk(
    chunk: Chunk,
    page: Page | None,
    cfg: GenerationConfig,
    gateway,
    page_render_path: str | None = None,
    skipped: list | None = None,
) -> list[QueryNode]:
    """Generate, with one retry on unparseable output.

    A second parse failure skips the chunk: the id is appended to
    ``skipped`` and an empty list returned. Gateway errors propagate.
    """
    messages = build_generation_request(chunk, page, cfg, page_render_path)
    last_error = None
    for attempt in range(2):
        raw = gateway.generate(messages)
        try:
            return parse_generation_response(raw, chunk.chunk_id, cfg)
        except GenerationParseError as exc:
            last_error = exc
            log.warning(
                "unparseable generation output for %s (attempt %d): %s",
                chunk.chunk_id, attempt + 1, exc,
            )
    if skipped is not None:
        skipped.append(chunk.chunk_id)
    log.warning("skipping %s after retry: %s", chunk.chunk_id, last_error)
    return []


def node_text(node: QueryNode, repr_mode: str = REPR_QA) -> str:
    """The text projection of a node that gets embedded."""
    if repr_mode == REPR_QA:
        return f"{node.query_text}\n{node.answer_text}"
    if repr_mode == REPR_Q:
        return node.query_text
    if repr_mode == REPR_A:
        return node.answer_text
    raise ConfigurationError(f"unknown node representation: {repr_mode!r}")


def embed_query_nodes(
    nodes: Sequence[QueryNode],
    repr_mode: str,
    gateway,
    batch_size: int = 64,
) -> list[QueryNode]:
    """Attach embeddings to nodes, batch by batch, enforcing one dimension."""
    if batch_size < 1:
        raise ConfigurationError("batch_size must be at least 1")
    out: list[QueryNode] = []
    dim: int | None = None
    for start in range(0, len(nodes), batch_size):
        batch = nodes[start : start + batch_size]
        embeddings = gateway.embed_texts([node_text(n, repr_mode) for n in batch])
        if len(embeddings) != len(batch):
            raise ProtocolError("embedding batch arity mismatch")
        for node, emb in zip(batch, embeddings):
            if dim is None:
                dim = emb.dim
            elif emb.dim != dim:
                raise ProtocolError(
                    f"embedding dimension drift: expected {dim}, got {emb.dim}"
                )
            out.append(replace(node, embedding=emb))
    return out


def node_to_record(node: QueryNode) -> dict:
    return {
        "q_id": node.query_id,
        "chunk_id": node.chunk_id,
        "query": node.query_text,
        "answer": node.answer_text,
        "level": node.level,
    }


def node_from_record(raw: dict) -> QueryNode:
    try:
        return QueryNode(
            query_id=raw["q_id"],
            chunk_id=raw["chunk_id"],
            query_text=raw["query"],
            answer_text=raw["answer"],
            level=raw.get("level"),
        )
    except KeyError as exc:
        raise InputError(f"query record missing field {exc}") from None
