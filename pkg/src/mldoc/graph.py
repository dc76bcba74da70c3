"""Chunk-query graph construction and similarity primitives.

The graph holds two node families: chunks and the query nodes generated
from them. Every query node anchors to exactly one chunk, and each query
node links to its k nearest query neighbors by offset inner-product
similarity. The graph is immutable once built; traversal treats the
stored directed neighbor lists as undirected.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Chunk
from .doc2query import REPR_QA, REPRS, QueryNode
from .errors import ConfigurationError, InputError
from .gateway import Embedding


@dataclass(frozen=True)
class GraphParams:
    k: int = 3
    epsilon: float = 1.0
    dim: int = 0
    repr: str = REPR_QA

    def validate(self) -> None:
        if self.k < 1:
            raise ConfigurationError("k must be at least 1")
        if self.epsilon < 0:
            raise ConfigurationError("epsilon must be non-negative")
        if self.repr not in REPRS:
            raise ConfigurationError(f"unknown node representation: {self.repr!r}")


def _as_vector(value) -> np.ndarray:
    if isinstance(value, Embedding):
        return value.values
    return np.asarray(value)


def sim(a, b, epsilon: float = 1.0) -> float:
    """Offset similarity between two unit vectors.

    The inner product is evaluated in float64 with one fixed summation
    order, so sim(a, b) == sim(b, a) bit for bit. It is clamped to the
    valid cosine range before the offset, keeping results in
    [epsilon - 1, epsilon + 1] despite rounding.
    """
    av = _as_vector(a).astype(np.float64, copy=False)
    bv = _as_vector(b).astype(np.float64, copy=False)
    if av.shape != bv.shape:
        raise InputError(f"dimension mismatch: {av.shape} vs {bv.shape}")
    ip = float(np.multiply(av, bv).sum())
    ip = min(1.0, max(-1.0, ip))
    return ip + epsilon


def _offset_inner(matrix64: np.ndarray, probe64: np.ndarray, epsilon: float) -> np.ndarray:
    """sim() against every matrix row, same arithmetic as the scalar path."""
    if matrix64.shape[0] == 0:
        return np.zeros(0, dtype=np.float64)
    ips = np.multiply(matrix64, probe64).sum(axis=1)
    return np.clip(ips, -1.0, 1.0) + epsilon


class McqGraph:
    """Immutable chunk-query graph.

    Query ids are kept in sorted order; the embedding matrix row i belongs
    to the i-th sorted id, which also makes stable argsort ties resolve to
    ascending id without string comparisons.
    """

    def __init__(
        self,
        chunks: Mapping[str, Chunk],
        queries: Mapping[str, QueryNode],
        qq_out: Mapping[str, Sequence[tuple[str, float]]],
        params: GraphParams,
    ):
        params.validate()
        self.chunks: dict[str, Chunk] = dict(chunks)
        self.queries: dict[str, QueryNode] = dict(queries)
        self.cq_edges: dict[str, str] = {qid: node.chunk_id for qid, node in self.queries.items()}
        self.qq_out: dict[str, list[tuple[str, float]]] = {
            qid: [(nbr, float(s)) for nbr, s in nbrs] for qid, nbrs in qq_out.items()
        }
        self.params = params

        self.query_ids: list[str] = sorted(self.queries)
        self._row: dict[str, int] = {qid: i for i, qid in enumerate(self.query_ids)}
        if self.query_ids:
            dim = params.dim
            self.matrix = np.zeros((len(self.query_ids), dim), dtype=np.float32)
            for i, qid in enumerate(self.query_ids):
                emb = self.queries[qid].embedding
                if emb is None:
                    raise InputError(f"query node {qid} has no embedding")
                if emb.dim != dim:
                    raise InputError(
                        f"query node {qid} embedding dim {emb.dim} != graph dim {dim}"
                    )
                self.matrix[i] = emb.values
        else:
            self.matrix = np.zeros((0, params.dim), dtype=np.float32)
        self._matrix64 = self.matrix.astype(np.float64)

        undirected: dict[str, set[str]] = {qid: set() for qid in self.queries}
        for qid, nbrs in self.qq_out.items():
            for nbr, _ in nbrs:
                undirected[qid].add(nbr)
                undirected[nbr].add(qid)
        self._undirected = undirected

    def counts(self) -> dict:
        return {"chunks": len(self.chunks), "queries": len(self.queries)}

    def sims_to(self, probe) -> np.ndarray:
        """Offset similarity from a probe embedding to every query node."""
        pv = _as_vector(probe)
        if self.query_ids and pv.shape[0] != self.params.dim:
            raise InputError(f"probe dim {pv.shape[0]} != graph dim {self.params.dim}")
        return _offset_inner(self._matrix64, pv.astype(np.float64, copy=False), self.params.epsilon)


def build_graph(
    chunks: Sequence[Chunk],
    nodes: Sequence[QueryNode],
    params: GraphParams | None = None,
) -> McqGraph:
    """Assemble the graph from chunks and embedded query nodes.

    Exact k-nearest-neighbor lists are computed by brute force; ties on
    similarity resolve to ascending query id. Neighbor list length is
    min(k, number of other nodes).
    """
    params = params or GraphParams()
    params.validate()

    chunk_map: dict[str, Chunk] = {}
    for chunk in chunks:
        if chunk.chunk_id in chunk_map:
            raise InputError(f"duplicate chunk_id {chunk.chunk_id}")
        chunk_map[chunk.chunk_id] = chunk

    node_map: dict[str, QueryNode] = {}
    orphans: list[str] = []
    missing_emb: list[str] = []
    dims: set[int] = set()
    for node in nodes:
        if node.query_id in node_map:
            raise InputError(f"duplicate query_id {node.query_id}")
        node_map[node.query_id] = node
        if node.chunk_id not in chunk_map:
            orphans.append(node.query_id)
        if node.embedding is None:
            missing_emb.append(node.query_id)
        else:
            dims.add(node.embedding.dim)
    if orphans:
        raise InputError(f"query nodes anchored to unknown chunks: {orphans[:10]}")
    if missing_emb:
        raise InputError(f"query nodes missing embeddings: {missing_emb[:10]}")
    if len(dims) > 1:
        raise InputError(f"mixed embedding dimensions: {sorted(dims)}")

    dim = dims.pop() if dims else params.dim
    params = replace(params, dim=dim)

    ids = sorted(node_map)
    n = len(ids)
    qq_out: dict[str, list[tuple[str, float]]] = {}
    if n:
        matrix64 = np.stack(
            [node_map[qid].embedding.values.astype(np.float64) for qid in ids]
        )
        limit = min(params.k, n - 1)
        for i, qid in enumerate(ids):
            sims = _offset_inner(matrix64, matrix64[i], params.epsilon)
            sims[i] = -np.inf  # self never a neighbor
            # stable sort on -sim; equal sims keep ascending row order = ascending id
            order = np.argsort(-sims, kind="stable")[:limit]
            qq_out[qid] = [(ids[j], float(sims[j])) for j in order]

    return McqGraph(chunks=chunk_map, queries=node_map, qq_out=qq_out, params=params)


def knn_queries(graph: McqGraph, probe, limit: int) -> list[tuple[str, float]]:
    """Top ``limit`` query nodes by offset similarity to the probe."""
    if limit < 0:
        raise InputError("limit must be non-negative")
    if not graph.query_ids or limit == 0:
        return []
    sims = graph.sims_to(probe)
    order = np.argsort(-sims, kind="stable")[: min(limit, len(graph.query_ids))]
    return [(graph.query_ids[j], float(sims[j])) for j in order]


def neighbors_within(graph: McqGraph, seeds: Iterable[str], h: int) -> set[str]:
    """Every node within h undirected hops of the seed set, seeds included."""
    if h < 0:
        raise InputError("hop count must be non-negative")
    seed_set = set(seeds)
    unknown = [s for s in seed_set if s not in graph.queries]
    if unknown:
        raise InputError(f"unknown seed query ids: {sorted(unknown)[:10]}")
    visited = set(seed_set)
    frontier = set(seed_set)
    for _ in range(h):
        if not frontier:
            break
        nxt: set[str] = set()
        for qid in frontier:
            nxt.update(graph._undirected[qid])
        frontier = nxt - visited
        visited |= frontier
    return visited
