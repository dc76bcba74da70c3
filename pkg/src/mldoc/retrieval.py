"""Query-centric retrieval over the chunk-query graph.

Four stages: pick entry query nodes by offset similarity to the user
query (threshold first, then budget), expand them h hops along undirected
query-query edges, gather the chunks the expanded set anchors to, and
rank chunks by aggregating their supporters' similarities. Two classic
baselines, BM25 and dense chunk retrieval, share the ranking conventions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .corpus import Chunk, tokenize
from .errors import ConfigurationError, InputError
from .gateway import Embedding
from .graph import McqGraph

AGG_MAX = "max"
AGG_MEAN = "mean"


@dataclass(frozen=True)
class RetrievalConfig:
    n: int = 10
    alpha: float = 1.2
    h: int = 2
    K: int = 5
    agg: str = AGG_MAX
    repr: str | None = None  # None adopts the graph's build-time representation

    def validate(self, epsilon: float | None = None) -> None:
        if self.n < 1:
            raise ConfigurationError("entry budget n must be at least 1")
        if self.h < 0:
            raise ConfigurationError("hop depth h must be non-negative")
        if self.K < 1:
            raise ConfigurationError("context size K must be at least 1")
        if self.agg not in (AGG_MAX, AGG_MEAN):
            raise ConfigurationError(f"unknown aggregation: {self.agg!r}")
        if self.alpha < 0:
            raise ConfigurationError("alpha must be non-negative")
        if epsilon is not None and self.alpha > epsilon + 1:
            raise ConfigurationError(
                f"alpha {self.alpha} exceeds the maximum reachable similarity {epsilon + 1}"
            )


@dataclass(frozen=True)
class Supporter:
    q_id: str
    sim: float
    hops: int


@dataclass(frozen=True)
class RankedChunk:
    chunk_id: str
    score: float
    supporters: tuple[Supporter, ...]


@dataclass
class RetrievalResult:
    query: str
    entry_nodes: list[tuple[str, float]]
    expanded_count: int
    ranked: list[RankedChunk]

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "entry_nodes": [{"q_id": qid, "sim": s} for qid, s in self.entry_nodes],
            "expanded": self.expanded_count,
            "ranked": [
                {
                    "chunk_id": rc.chunk_id,
                    "score": rc.score,
                    "supporters": [
                        {"q_id": sp.q_id, "sim": sp.sim, "hops": sp.hops}
                        for sp in rc.supporters
                    ],
                }
                for rc in self.ranked
            ],
        }


@dataclass(frozen=True)
class ExpandedNode:
    sim: float
    hops: int


def retrieve_entry_nodes(
    graph: McqGraph, user_embedding, n: int, alpha: float
) -> list[tuple[str, float]]:
    """Entry nodes: similarity threshold first, then keep the top n.

    Ordered by similarity descending, query id ascending on ties.
    """
    if n < 1:
        raise InputError("entry budget n must be at least 1")
    if not graph.query_ids:
        return []
    sims = graph.sims_to(user_embedding)
    order = np.argsort(-sims, kind="stable")
    entries: list[tuple[str, float]] = []
    for j in order:
        s = float(sims[j])
        if s < alpha:
            break  # sorted descending, nothing further can pass
        entries.append((graph.query_ids[j], s))
        if len(entries) == n:
            break
    return entries


def expand_queries(
    graph: McqGraph,
    entries: Sequence[tuple[str, float]],
    h: int,
    user_embedding,
) -> dict[str, ExpandedNode]:
    """Breadth-first closure of the entry set within h undirected hops.

    Every member gets its minimum hop distance from the entry set and a
    fresh similarity to the user query. Expansion applies no threshold:
    nodes that would fail alpha still join once reached.
    """
    if h < 0:
        raise InputError("hop depth h must be non-negative")
    if not entries:
        return {}
    sims = graph.sims_to(user_embedding)

    hops: dict[str, int] = {}
    frontier: set[str] = set()
    for qid, _ in entries:
        if qid not in graph.queries:
            raise InputError(f"unknown entry query id: {qid}")
        hops[qid] = 0
        frontier.add(qid)
    for depth in range(1, h + 1):
        nxt: set[str] = set()
        for qid in frontier:
            for nbr in graph._undirected[qid]:
                if nbr not in hops:
                    hops[nbr] = depth
                    nxt.add(nbr)
        if not nxt:
            break
        frontier = nxt

    return {
        qid: ExpandedNode(sim=float(sims[graph._row[qid]]), hops=depth)
        for qid, depth in hops.items()
    }


def collect_candidates(
    graph: McqGraph, expanded: Mapping[str, ExpandedNode]
) -> dict[str, list[Supporter]]:
    """Group expanded query nodes by the chunk they anchor to."""
    candidates: dict[str, list[Supporter]] = {}
    for qid, info in expanded.items():
        chunk_id = graph.cq_edges[qid]
        candidates.setdefault(chunk_id, []).append(
            Supporter(q_id=qid, sim=info.sim, hops=info.hops)
        )
    for chunk_id in candidates:
        candidates[chunk_id].sort(key=lambda sp: (-sp.sim, sp.q_id))
    return candidates


def rank_chunks(candidates: Mapping[str, list[Supporter]], agg: str = AGG_MAX) -> list[RankedChunk]:
    """Score each candidate chunk from its supporters and order the result.

    max takes the best supporter, mean the arithmetic mean of all of them.
    Order is score descending, chunk id ascending on ties.
    """
    if agg not in (AGG_MAX, AGG_MEAN):
        raise ConfigurationError(f"unknown aggregation: {agg!r}")
    scored = []
    for chunk_id, supporters in candidates.items():
        if not supporters:
            continue
        sims = [sp.sim for sp in supporters]
        score = max(sims) if agg == AGG_MAX else sum(sims) / len(sims)
        scored.append(RankedChunk(chunk_id=chunk_id, score=score, supporters=tuple(supporters)))
    scored.sort(key=lambda rc: (-rc.score, rc.chunk_id))
    return scored


def select_context(ranked: Sequence[RankedChunk], K: int) -> list[RankedChunk]:
    if K < 1:
        raise InputError("context size K must be at least 1")
    return list(ranked[:K])


def retrieve(graph: McqGraph, user_query: str, cfg: RetrievalConfig, gateway) -> RetrievalResult:
    """Run the full pipeline for one user query.

    An empty graph short-circuits to an empty result without touching the
    embedding endpoint. The config's node representation, when set, must
    match what the graph was built with.
    """
    cfg.validate(epsilon=graph.params.epsilon)
    if cfg.repr is not None and cfg.repr != graph.params.repr:
        raise ConfigurationError(
            f"retrieval repr {cfg.repr!r} does not match graph repr {graph.params.repr!r}"
        )
    if not graph.query_ids:
        return RetrievalResult(query=user_query, entry_nodes=[], expanded_count=0, ranked=[])

    user_embedding = gateway.embed_texts([user_query])[0]
    entries = retrieve_entry_nodes(graph, user_embedding, cfg.n, cfg.alpha)
    expanded = expand_queries(graph, entries, cfg.h, user_embedding)
    candidates = collect_candidates(graph, expanded)
    ranked = rank_chunks(candidates, cfg.agg)
    top = select_context(ranked, cfg.K)
    return RetrievalResult(
        query=user_query,
        entry_nodes=entries,
        expanded_count=len(expanded),
        ranked=top,
    )


# ---------------------------------------------------------------------------
# baselines

def bm25_retrieve(
    chunks: Sequence[Chunk],
    user_query: str,
    K: int,
    tokenizer_id: str = "simple",
    k1: float = 1.2,
    b: float = 0.75,
) -> list[tuple[str, float]]:
    """Okapi BM25 over chunk text, lowercased corpus-tokenizer terms.

    Uses the non-negative idf variant ln(1 + (N - df + 0.5) / (df + 0.5)).
    Query terms are scored as given, so repeated terms count repeatedly.
    Ties, including all-zero scores, order by chunk id ascending.
    """
    if K < 1:
        raise InputError("K must be at least 1")
    if not chunks:
        return []

    docs = []
    for chunk in chunks:
        terms = [t.lower() for t in tokenize(chunk.text_content, tokenizer_id)]
        counts: dict[str, int] = {}
        for t in terms:
            counts[t] = counts.get(t, 0) + 1
        docs.append((chunk.chunk_id, counts, len(terms)))

    n_docs = len(docs)
    avgdl = sum(dl for _, _, dl in docs) / n_docs
    df: dict[str, int] = {}
    for _, counts, _ in docs:
        for term in counts:
            df[term] = df.get(term, 0) + 1

    query_terms = [t.lower() for t in tokenize(user_query, tokenizer_id)]
    scores: dict[str, float] = {}
    for chunk_id, counts, dl in docs:
        score = 0.0
        for term in query_terms:
            tf = counts.get(term, 0)
            if tf == 0:
                continue
            idf = math.log(1.0 + (n_docs - df[term] + 0.5) / (df[term] + 0.5))
            denom = tf + k1 * (1.0 - b + b * (dl / avgdl if avgdl > 0 else 0.0))
            score += idf * tf * (k1 + 1.0) / denom
        scores[chunk_id] = score

    ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return ordered[:K]


def dense_chunk_retrieve(
    chunk_embeddings: Mapping[str, Embedding],
    user_embedding,
    K: int,
) -> list[tuple[str, float]]:
    """Top K chunks by raw inner product between unit vectors."""
    if K < 1:
        raise InputError("K must be at least 1")
    if not chunk_embeddings:
        return []
    probe = (
        user_embedding.values if isinstance(user_embedding, Embedding) else np.asarray(user_embedding)
    ).astype(np.float64)
    scored: list[tuple[str, float]] = []
    for chunk_id, emb in chunk_embeddings.items():
        vec = emb.values.astype(np.float64)
        if vec.shape != probe.shape:
            raise InputError(
                f"chunk {chunk_id} embedding dim {vec.shape[0]} != probe dim {probe.shape[0]}"
            )
        scored.append((chunk_id, float(np.multiply(vec, probe).sum())))
    scored.sort(key=lambda kv: (-kv[1], kv[0]))
    return scored[:K]
