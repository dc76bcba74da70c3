"""LLM-as-judge scoring and accuracy aggregation.

Each QA record carries evidence source tags and a page scope label.
Candidates are judged against references by a separate model with
temperature 0; unanswerable-equivalent phrasing is normalized before
strict matching rules apply. Rows whose judge output stays unparseable
after a retry are excluded and counted, never silently scored 0.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass

from .answering import extract_final_answer
from .errors import InputError, JudgeParseError
from .gateway import ChatMessage, TextPart
from .prompts import PROMPT_VERSION, get_prompt

log = logging.getLogger(__name__)

EVIDENCE_SOURCES = ("TXT", "LAY", "CHA", "TAB", "FIG")
PAGE_SCOPES = ("single", "multi", "unanswerable", "cross_element")


@dataclass(frozen=True)
class QaRecord:
    question: str
    reference_answer: str
    doc_id: str
    evidence_pages: tuple[int, ...] = ()
    evidence_sources: tuple[str, ...] = ()
    page_scope: str = "single"

    def validate(self) -> None:
        if not self.question:
            raise InputError("QA record question must be non-empty")
        for src in self.evidence_sources:
            if src not in EVIDENCE_SOURCES:
                raise InputError(f"unknown evidence source {src!r}")
        if self.page_scope not in PAGE_SCOPES:
            raise InputError(f"unknown page scope {self.page_scope!r}")


@dataclass(frozen=True)
class JudgeVerdict:
    score: int
    candidate_final: str
    normalized_unanswerable: bool
    raw_judge_output: str


def load_qa_records(path: str) -> list[QaRecord]:
    records = []
    try:
        fh = open(path, encoding="utf-8")
    except FileNotFoundError:
        raise InputError(f"dataset file not found: {path}") from None
    with fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{line_no} is not valid JSON: {exc}") from None
            record = QaRecord(
                question=raw.get("question", ""),
                reference_answer=raw.get("reference_answer", ""),
                doc_id=raw.get("doc_id", ""),
                evidence_pages=tuple(raw.get("evidence_pages", [])),
                evidence_sources=tuple(raw.get("evidence_sources", [])),
                page_scope=raw.get("page_scope", "single"),
            )
            record.validate()
            records.append(record)
    return records


# ---------------------------------------------------------------------------
# unanswerable normalization

_APOSTROPHES = str.maketrans({"’": "'", "‘": "'"})

_EXPLICIT_UNANSWERABLE = {
    "i dont know",
    "i do not know",
    "dont know",
    "not answerable",
    "unanswerable",
    "no answer",
    "not enough information",
    "insufficient information",
    "not mentioned",
    "unknown",
    "cannot be determined",
    "cant be determined",
    "can not be determined",
    "no information provided",
    "no information",
    "na",
    "not applicable",
    "none",
    "nothing",
    "unable to answer",
    "i cannot answer this question",
    "cannot answer this question",
}

_NEGATIVE_EXISTENCE = [
    re.compile(r"^there (is|are) none\b"),
    re.compile(r"^none of\b"),
    re.compile(r"^no such \w+ exists?\b"),
    re.compile(r"^no\b.*\b(is|are) present\b"),
    re.compile(r"^no\b.*\brequires?\b"),
    re.compile(r"^(based on the provided documents? )?i cannot answer\b"),
]


def _normalize_answer(text: str) -> str:
    lowered = text.translate(_APOSTROPHES).lower()
    stripped = re.sub(r"[^\w\s]", "", lowered)
    return re.sub(r"\s+", " ", stripped).strip()


def is_unanswerable_equivalent(text: str) -> bool:
    """True when the text asserts absence of an answer.

    Covers the explicit refusal family and negative-existence statements.
    Invariant under case changes and punctuation.
    """
    norm = _normalize_answer(text)
    if not norm:
        return True  # empty answers carry no content
    if norm in _EXPLICIT_UNANSWERABLE:
        return True
    return any(p.match(norm) for p in _NEGATIVE_EXISTENCE)


# ---------------------------------------------------------------------------
# judging

def build_judge_prompt(
    question: str, reference: str, candidate: str, prompt_version: str = PROMPT_VERSION
) -> list[ChatMessage]:
    system = get_prompt("judge", prompt_version)
    user = (
        f"Question: {question}\n"
        f"Reference Answer: {reference}\n"
        f"Candidate Answer: {candidate}"
    )
    return [
        ChatMessage(role="system", parts=(TextPart(system),)),
        ChatMessage(role="user", parts=(TextPart(user),)),
    ]


_SCORE_PATTERN = re.compile(r"score\s*[:=]?\s*([01])\b", re.IGNORECASE)


def parse_judge_score(raw: str):
    """Map judge output to 0 or 1, or None when no score is recognizable.

    Accepts "Score: 1" anywhere, a bare 0/1 reply, and JSON {"score": 1}.
    """
    text = raw.strip()
    if text in ("0", "1"):
        return int(text)
    fenced = re.sub(r"^```(?:json)?\s*|\s*```$", "", text)
    try:
        obj = json.loads(fenced)
        if isinstance(obj, dict) and obj.get("score") in (0, 1):
            return int(obj["score"])
        if isinstance(obj, int) and obj in (0, 1):
            return obj
    except ValueError:
        pass
    match = _SCORE_PATTERN.search(text)
    if match:
        return int(match.group(1))
    return None


def judge(gateway, record: QaRecord, candidate: str) -> JudgeVerdict:
    """Judge one candidate, retrying once on unparseable output.

    Raises JudgeParseError after the retry; callers exclude the row and
    count it rather than assuming a score.
    """
    messages = build_judge_prompt(record.question, record.reference_answer, candidate)
    raw = ""
    for attempt in range(2):
        raw = gateway.judge_complete(messages)
        score = parse_judge_score(raw)
        if score is not None:
            final = extract_final_answer(candidate)
            return JudgeVerdict(
                score=score,
                candidate_final=final,
                normalized_unanswerable=is_unanswerable_equivalent(final),
                raw_judge_output=raw,
            )
        log.warning("unparseable judge output (attempt %d): %r", attempt + 1, raw[:200])
    raise JudgeParseError("judge output carried no recognizable score", raw=raw)


# ---------------------------------------------------------------------------
# aggregation

def aggregate_accuracy(verdicts, records) -> dict:
    """Overall and per-category accuracy.

    ``verdicts`` aligns with ``records``; None marks an excluded row.
    A record tagged with several evidence sources counts once per source.
    Scope categories partition the scored rows, so the overall value is
    always their count-weighted mean.
    """
    if len(verdicts) != len(records):
        raise InputError("verdicts and records must align")
    scored: list[tuple[int, QaRecord]] = []
    excluded = 0
    for verdict, record in zip(verdicts, records):
        if verdict is None:
            excluded += 1
        else:
            scored.append((verdict.score, record))

    by_source: dict[str, list[int]] = {}
    by_scope: dict[str, list[int]] = {}
    for score, record in scored:
        for src in record.evidence_sources:
            by_source.setdefault(src, []).append(score)
        by_scope.setdefault(record.page_scope, []).append(score)

    def mean(xs: list[int]) -> float:
        return sum(xs) / len(xs)

    return {
        "overall": mean([s for s, _ in scored]) if scored else 0.0,
        "by_source": {src: mean(v) for src, v in sorted(by_source.items())},
        "by_scope": {scope: mean(v) for scope, v in sorted(by_scope.items())},
        "n": len(scored),
        "excluded": excluded,
    }
