"""Answer generation over retrieved context."""

from __future__ import annotations

import logging
import re
from typing import Mapping, Sequence

from .corpus import Chunk
from .errors import ConfigurationError, ContextOverflowError
from .gateway import ChatMessage, ImagePart, TextPart
from .prompts import PROMPT_VERSION, get_prompt

log = logging.getLogger(__name__)

ANSWER_PLAIN = "plain"
ANSWER_PAGE = "page_context"

_FINAL_MARKER = re.compile(r"final\s*answer\s*:", re.IGNORECASE)
_EDGE_EMPHASIS = re.compile(r"^[\s*_`]+|[\s*_`]+$")


def build_answer_prompt(
    question: str,
    context: Sequence[Chunk],
    mode: str = ANSWER_PLAIN,
    page_renders: Mapping[str, Sequence[str]] | None = None,
    prompt_version: str = PROMPT_VERSION,
) -> list[ChatMessage]:
    """Compose the answering request: one system message, one user message.

    The user message carries the question as its first text part, then one
    text part per context chunk in rank order. Image chunks add their image
    after the caption; page-context mode additionally attaches each chunk's
    page renders, which the caller must supply.
    """
    if mode not in (ANSWER_PLAIN, ANSWER_PAGE):
        raise ConfigurationError(f"unknown answer mode: {mode!r}")
    system = get_prompt("answer" if mode == ANSWER_PLAIN else "answer_page", prompt_version)

    parts: list = [TextPart(f"Question: {question}")]
    for i, chunk in enumerate(context):
        label = "Text/Data Chunk" if mode == ANSWER_PAGE else "Context"
        parts.append(TextPart(f"[{label} {i + 1}] ({chunk.content_type})\n{chunk.text_content}"))
        if chunk.modality == "image" and chunk.image_ref:
            parts.append(ImagePart(chunk.image_ref))
        if mode == ANSWER_PAGE:
            renders = (page_renders or {}).get(chunk.chunk_id)
            if not renders:
                raise ConfigurationError(
                    f"page_context answering needs a page render for {chunk.chunk_id}"
                )
            for render in renders:
                parts.append(ImagePart(render))
    return [
        ChatMessage(role="system", parts=(TextPart(system),)),
        ChatMessage(role="user", parts=tuple(parts)),
    ]


def extract_final_answer(text: str) -> str:
    """The substring after the last "Final Answer:" marker, if any.

    Matching is case insensitive; the result is trimmed of whitespace and
    edge markdown emphasis. Without a marker the whole text is treated as
    the answer. Applying the function twice changes nothing.
    """
    last = None
    for match in _FINAL_MARKER.finditer(text):
        last = match
    tail = text[last.end():] if last else text
    return _EDGE_EMPHASIS.sub("", tail)


def generate_answer(
    gateway,
    question: str,
    context: Sequence[Chunk],
    mode: str = ANSWER_PLAIN,
    page_renders: Mapping[str, Sequence[str]] | None = None,
) -> tuple[str, str]:
    """Ask the model, returning (full_text, final_answer).

    On a context-window rejection the lowest-ranked chunk is dropped and
    the request retried once.
    """
    messages = build_answer_prompt(question, context, mode, page_renders)
    try:
        full = gateway.generate(messages)
    except ContextOverflowError:
        if len(context) <= 1:
            raise
        log.warning("context overflow, retrying with %d chunks", len(context) - 1)
        messages = build_answer_prompt(question, list(context[:-1]), mode, page_renders)
        full = gateway.generate(messages)
    return full, extract_final_answer(full)
