"""Zero-shot visual noise filtering.

Image chunks are scored against two fixed label sets by a zero-shot
classifier. A chunk is dropped only when the single best-scoring label
belongs to the filter set; exact ties resolve toward keeping the chunk,
and classifier failures keep the chunk (fail open).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping

from .corpus import Chunk
from .errors import ConfigurationError, InputError

log = logging.getLogger(__name__)

RETAIN_LABELS = (
    "table",
    "chart",
    "graph",
    "diagram",
    "map",
    "infographic",
    "equation",
    "flow chart",
    "scatter plot",
    "bar chart",
    "form",
)

FILTER_LABELS = (
    "logo",
    "banner",
    "advertisement",
    "poster",
    "cover",
    "illustration",
    "background",
    "icon",
    "photo",
    "texture",
)


@dataclass(frozen=True)
class VisualFilterPolicy:
    retain_labels: tuple[str, ...] = RETAIN_LABELS
    filter_labels: tuple[str, ...] = FILTER_LABELS
    prompt_template: str = "a photo of a {label}"

    def validate(self) -> None:
        if not self.retain_labels or not self.filter_labels:
            raise ConfigurationError("both label sets must be non-empty")
        if set(self.retain_labels) & set(self.filter_labels):
            raise ConfigurationError("retain and filter label sets must be disjoint")
        if "{label}" not in self.prompt_template:
            raise ConfigurationError("prompt_template must contain {label}")

    @property
    def all_labels(self) -> tuple[str, ...]:
        return self.retain_labels + self.filter_labels


def default_policy() -> VisualFilterPolicy:
    return VisualFilterPolicy()


def classify_visual(scores: Mapping[str, float], policy: VisualFilterPolicy) -> str:
    """Map a label->score table to "keep" or "drop".

    The decision depends only on which label attains the maximum score, so
    scaling every score by a positive constant cannot change it.
    """
    policy.validate()
    missing = [l for l in policy.all_labels if l not in scores]
    if missing:
        raise InputError(f"scores missing labels: {missing}")
    best = max(scores[l] for l in policy.all_labels)
    winners = [l for l in policy.all_labels if scores[l] == best]
    if any(l in policy.retain_labels for l in winners):
        return "keep"
    return "drop"


@dataclass
class FilterResult:
    chunks: list[Chunk]
    dropped_chunk_ids: list[str]
    warning_count: int


def filter_visual_noise(
    chunks: list[Chunk],
    classifier: Callable[[str], Mapping[str, float]],
    policy: VisualFilterPolicy | None = None,
    enabled: bool = True,
    max_workers: int = 1,
) -> FilterResult:
    """Drop image chunks the classifier judges to be visual noise.

    ``classifier`` maps an image_ref to a label->score table. Text chunks
    pass through untouched, as does everything when ``enabled`` is false.
    Classifier errors are logged, counted, and the chunk kept.
    """
    policy = policy or default_policy()
    policy.validate()
    if not enabled:
        return FilterResult(chunks=list(chunks), dropped_chunk_ids=[], warning_count=0)

    image_positions = [i for i, c in enumerate(chunks) if c.modality == "image"]

    def decide(pos: int) -> tuple[int, str, bool]:
        chunk = chunks[pos]
        try:
            scores = classifier(chunk.image_ref)
            return pos, classify_visual(scores, policy), False
        except Exception as exc:  # fail open, the chunk may still be useful
            log.warning("visual classifier failed on %s: %s", chunk.chunk_id, exc)
            return pos, "keep", True

    decisions: dict[int, str] = {}
    warnings = 0
    if image_positions:
        workers = max(1, min(max_workers, len(image_positions)))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for pos, verdict, failed in pool.map(decide, image_positions):
                decisions[pos] = verdict
                if failed:
                    warnings += 1

    kept: list[Chunk] = []
    dropped: list[str] = []
    for i, chunk in enumerate(chunks):
        if decisions.get(i) == "drop":
            dropped.append(chunk.chunk_id)
        else:
            kept.append(chunk)
    return FilterResult(chunks=kept, dropped_chunk_ids=dropped, warning_count=warnings)
