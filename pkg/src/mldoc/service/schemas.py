"""Request and response models for the HTTP API."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class ElementIn(BaseModel):
    kind: str
    text: Optional[str] = None
    image_ref: Optional[str] = None
    ocr_text: Optional[str] = None


class PageIn(BaseModel):
    page_index: int
    render_ref: Optional[str] = None
    elements: list[ElementIn] = Field(default_factory=list)


class BundleIn(BaseModel):
    doc_id: str
    source_meta: dict = Field(default_factory=dict)
    pages: list[PageIn] = Field(default_factory=list)


class CreateCorpusRequest(BaseModel):
    bundle: BundleIn
    max_window: int = 1200
    overlap: int = 100
    tokenizer_id: str = "simple"


class CreateCorpusResponse(BaseModel):
    corpus_id: str
    documents: int
    chunks: int


class BuildRequest(BaseModel):
    mode: str = "chunk_only"
    max_queries: int = 20
    repr: str = "query_plus_answer"
    k: int = 3
    epsilon: float = 1.0
    filter_visuals: bool = True


class BuildResponse(BaseModel):
    chunks_total: int
    chunks_kept: int
    chunks_dropped: list[str]
    filter_warnings: int
    filter_enabled: bool
    queries_total: int
    queries_kept: int
    skipped_chunks: list[str]
    params: dict


class RetrieveParams(BaseModel):
    n: int = 10
    alpha: float = 1.2
    hops: int = 2
    topk: int = 5
    agg: str = "max"


class RetrieveRequest(BaseModel):
    query: str
    config: RetrieveParams = Field(default_factory=RetrieveParams)


class SupporterOut(BaseModel):
    q_id: str
    sim: float
    hops: int


class EntryNodeOut(BaseModel):
    q_id: str
    sim: float


class RankedChunkOut(BaseModel):
    chunk_id: str
    score: float
    supporters: list[SupporterOut]


class RetrieveResponse(BaseModel):
    query: str
    entry_nodes: list[EntryNodeOut]
    expanded: int
    ranked: list[RankedChunkOut]


class AnswerRequest(BaseModel):
    query: str
    config: RetrieveParams = Field(default_factory=RetrieveParams)
    mode: str = "plain"


class ContextChunkOut(BaseModel):
    chunk_id: str
    score: float


class AnswerResponse(BaseModel):
    answer: str
    final_answer: str
    context: list[ContextChunkOut]


class StatsResponse(BaseModel):
    corpus_id: str
    counts: dict
    params: dict
