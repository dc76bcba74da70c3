"""On-disk graph format.

A store directory holds five files: manifest.json with params, counts and
per-file sha256 checksums; chunks.jsonl; queries.jsonl; vectors.bin with
one little-endian float32 row per query in queries.jsonl order; and
qq_edges.jsonl with each node's neighbor list. Loading verifies version
and checksums and reconstructs a graph equal to the one saved, with bit
identical vectors.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import replace

import numpy as np

from .corpus import chunk_from_dict, chunk_to_dict
from .doc2query import QueryNode, node_from_record, node_to_record
from .errors import LoadError, MissingStoreError, StoreError
from .gateway import Embedding
from .graph import GraphParams, McqGraph

FORMAT_VERSION = 1

_DATA_FILES = ("chunks.jsonl", "queries.jsonl", "vectors.bin", "qq_edges.jsonl")


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def _write_jsonl(path: str, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")


def _read_jsonl(path: str) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise LoadError(f"{path}:{line_no} is not valid JSON: {exc}") from None
    return out


def save_graph(graph: McqGraph, store_dir: str) -> None:
    """Write the five store files, overwriting any previous content."""
    os.makedirs(store_dir, exist_ok=True)

    chunk_rows = [chunk_to_dict(graph.chunks[cid]) for cid in sorted(graph.chunks)]
    _write_jsonl(os.path.join(store_dir, "chunks.jsonl"), chunk_rows)

    query_rows = [node_to_record(graph.queries[qid]) for qid in graph.query_ids]
    _write_jsonl(os.path.join(store_dir, "queries.jsonl"), query_rows)

    vectors = np.ascontiguousarray(graph.matrix, dtype="<f4")
    with open(os.path.join(store_dir, "vectors.bin"), "wb") as fh:
        fh.write(vectors.tobytes())

    edge_rows = [
        {"q_id": qid, "nbrs": [[nbr, s] for nbr, s in graph.qq_out.get(qid, [])]}
        for qid in graph.query_ids
    ]
    _write_jsonl(os.path.join(store_dir, "qq_edges.jsonl"), edge_rows)

    manifest = {
        "format_version": FORMAT_VERSION,
        "dim": graph.params.dim,
        "k": graph.params.k,
        "epsilon": graph.params.epsilon,
        "repr": graph.params.repr,
        "counts": graph.counts(),
        "checksums": {
            name: _sha256(os.path.join(store_dir, name)) for name in _DATA_FILES
        },
    }
    with open(os.path.join(store_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, ensure_ascii=False)
        fh.write("\n")


def load_graph(store_dir: str) -> McqGraph:
    """Read a store directory back into an immutable graph.

    Fails on missing files, a format_version other than the one this code
    writes, or any checksum mismatch.
    """
    manifest_path = os.path.join(store_dir, "manifest.json")
    if not os.path.isfile(manifest_path):
        raise MissingStoreError(f"no manifest.json under {store_dir}")
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise LoadError(f"manifest.json is not valid JSON: {exc}") from None

    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise LoadError(f"unsupported format_version {version!r}, expected {FORMAT_VERSION}")

    checksums = manifest.get("checksums")
    if not isinstance(checksums, dict):
        raise LoadError("manifest.json missing checksums")
    for name in _DATA_FILES:
        path = os.path.join(store_dir, name)
        if not os.path.isfile(path):
            raise MissingStoreError(f"store file missing: {name}")
        expected = checksums.get(name)
        actual = _sha256(path)
        if actual != expected:
            raise LoadError(f"checksum mismatch for {name}: {actual} != {expected}")

    try:
        params = GraphParams(
            k=int(manifest["k"]),
            epsilon=float(manifest["epsilon"]),
            dim=int(manifest["dim"]),
            repr=str(manifest["repr"]),
        )
        counts = manifest["counts"]
    except (KeyError, TypeError, ValueError) as exc:
        raise LoadError(f"manifest.json missing or malformed field: {exc}") from None

    chunks = {}
    for raw in _read_jsonl(os.path.join(store_dir, "chunks.jsonl")):
        chunk = chunk_from_dict(raw)
        chunks[chunk.chunk_id] = chunk

    plain_nodes = [node_from_record(raw) for raw in _read_jsonl(os.path.join(store_dir, "queries.jsonl"))]

    with open(os.path.join(store_dir, "vectors.bin"), "rb") as fh:
        blob = fh.read()
    n, dim = len(plain_nodes), params.dim
    expected_len = n * dim * 4
    if len(blob) != expected_len:
        raise LoadError(f"vectors.bin holds {len(blob)} bytes, expected {expected_len}")
    matrix = np.frombuffer(blob, dtype="<f4").reshape(n, dim).copy() if n else np.zeros((0, dim), dtype=np.float32)

    queries: dict[str, QueryNode] = {}
    for i, node in enumerate(plain_nodes):
        if node.query_id in queries:
            raise LoadError(f"duplicate q_id in queries.jsonl: {node.query_id}")
        queries[node.query_id] = replace(node, embedding=Embedding(matrix[i]))

    qq_out: dict[str, list[tuple[str, float]]] = {}
    for raw in _read_jsonl(os.path.join(store_dir, "qq_edges.jsonl")):
        try:
            qid = raw["q_id"]
            nbrs = [(pair[0], float(pair[1])) for pair in raw["nbrs"]]
        except (KeyError, TypeError, IndexError) as exc:
            raise LoadError(f"malformed qq_edges.jsonl row: {exc}") from None
        if qid not in queries:
            raise LoadError(f"qq_edges.jsonl references unknown q_id {qid}")
        for nbr, _ in nbrs:
            if nbr not in queries:
                raise LoadError(f"neighbor {nbr} of {qid} is not a known q_id")
        qq_out[qid] = nbrs

    # queries.jsonl row order must match the sorted-id matrix order
    ids_in_file = [node.query_id for node in plain_nodes]
    if ids_in_file != sorted(ids_in_file):
        raise LoadError("queries.jsonl rows are not in sorted q_id order")

    graph = McqGraph(chunks=chunks, queries=queries, qq_out=qq_out, params=params)
    if graph.counts() != counts:
        raise LoadError(f"manifest counts {counts} disagree with store contents {graph.counts()}")
    return graph


def store_exists(store_dir: str) -> bool:
    return os.path.isfile(os.path.join(store_dir, "manifest.json"))


def require_store(store_dir: str) -> None:
    if not store_exists(store_dir):
        raise MissingStoreError(f"no graph store at {store_dir}, run build first")


class StoreLock:
    """Exclusive-create lock file guarding writes to one store directory."""

    def __init__(self, store_dir: str, timeout: float = 60.0, poll: float = 0.1):
        self.path = os.path.join(store_dir, ".build.lock")
        self.timeout = timeout
        self.poll = poll
        self._fd: int | None = None

    def __enter__(self) -> "StoreLock":
        import time

        os.makedirs(os.path.dirname(self.path), exist_ok=True)
        deadline = time.monotonic() + self.timeout
        while True:
            try:
                self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                os.write(self._fd, str(os.getpid()).encode())
                return self
            except FileExistsError:
                if time.monotonic() >= deadline:
                    raise StoreError(f"store is locked by another build: {self.path}") from None
                time.sleep(self.poll)

    def __exit__(self, *exc) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None
        try:
            os.unlink(self.path)
        except FileNotFoundError:
            pass
