"""Shared stage implementations behind the CLI and the HTTP service.

A store directory is the unit of work. Ingest drops normalized bundles
and assembled chunks into it, generate adds raw query nodes, build writes
the persisted graph under graph/, and the query/answer/eval/sweep stages
read that graph. Every stage is rerunnable: identical inputs produce byte
identical outputs.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import replace
from itertools import product

from .answering import ANSWER_PAGE, ANSWER_PLAIN, generate_answer
from .corpus import (
    ChunkingConfig,
    DocumentBundle,
    assemble_chunks,
    bundle_to_dict,
    chunk_from_dict,
    chunk_to_dict,
    load_bundle,
    validate_bundle,
)
from .doc2query import (
    GenerationConfig,
    embed_query_nodes,
    generate_queries_for_chunk,
    node_from_record,
    node_to_record,
)
from .errors import ConfigurationError, InputError, JudgeParseError, MissingStoreError
from .evaluation import aggregate_accuracy, judge, load_qa_records
from .filtering import VisualFilterPolicy, filter_visual_noise
from .graph import GraphParams, McqGraph, build_graph
from .retrieval import RetrievalConfig, bm25_retrieve, dense_chunk_retrieve, retrieve
from .store import StoreLock, load_graph, save_graph

log = logging.getLogger(__name__)

EVAL_METHODS = ("mcqg", "bm25", "dense")

DEFAULT_SWEEP_CAP = 1024


# ---------------------------------------------------------------------------
# store layout helpers

class StorePaths:
    def __init__(self, store_dir: str):
        self.root = store_dir

    @property
    def bundles_dir(self) -> str:
        return os.path.join(self.root, "bundles")

    @property
    def chunks(self) -> str:
        return os.path.join(self.root, "chunks.jsonl")

    @property
    def chunking(self) -> str:
        return os.path.join(self.root, "chunking.json")

    @property
    def generated_queries(self) -> str:
        return os.path.join(self.root, "generated_queries.jsonl")

    @property
    def generation_meta(self) -> str:
        return os.path.join(self.root, "generation.json")

    @property
    def build_report(self) -> str:
        return os.path.join(self.root, "build_report.json")

    @property
    def graph_dir(self) -> str:
        return os.path.join(self.root, "graph")


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, ensure_ascii=False)
        fh.write("\n")


def _read_json(path: str, missing_hint: str) -> dict:
    if not os.path.isfile(path):
        raise MissingStoreError(f"{path} not found, {missing_hint}")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _write_jsonl(path: str, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")


def _read_jsonl(path: str, missing_hint: str) -> list[dict]:
    if not os.path.isfile(path):
        raise MissingStoreError(f"{path} not found, {missing_hint}")
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def _resolve_ref(store_dir: str, ref: str) -> str:
    if os.path.isabs(ref):
        return ref
    return os.path.normpath(os.path.join(store_dir, ref))


# ---------------------------------------------------------------------------
# ingest

def _rebase_bundle(bundle: DocumentBundle, bundle_root: str | None, store_dir: str) -> DocumentBundle:
    """Rewrite image and render refs to be relative to the store directory."""
    if bundle_root is None:
        return bundle

    def rebase(ref: str | None) -> str | None:
        if ref is None or os.path.isabs(ref):
            return ref
        return os.path.relpath(os.path.join(bundle_root, ref), store_dir)

    pages = []
    for page in bundle.pages:
        elements = tuple(
            replace(e, image_ref=rebase(e.image_ref)) if e.image_ref else e
            for e in page.elements
        )
        pages.append(replace(page, render_ref=rebase(page.render_ref), elements=elements))
    return replace(bundle, pages=tuple(pages))


def load_store_bundles(store_dir: str) -> dict[str, DocumentBundle]:
    paths = StorePaths(store_dir)
    if not os.path.isdir(paths.bundles_dir):
        raise MissingStoreError(f"{paths.bundles_dir} not found, run ingest first")
    bundles: dict[str, DocumentBundle] = {}
    for name in sorted(os.listdir(paths.bundles_dir)):
        if not name.endswith(".json"):
            continue
        bundle = load_bundle(os.path.join(paths.bundles_dir, name))
        bundles[bundle.doc_id] = bundle
    return bundles


def _chunking_config(store_dir: str) -> ChunkingConfig:
    paths = StorePaths(store_dir)
    if os.path.isfile(paths.chunking):
        raw = _read_json(paths.chunking, "run ingest first")
        return ChunkingConfig(
            max_window=raw["max_window"],
            overlap=raw["overlap"],
            tokenizer_id=raw["tokenizer_id"],
        )
    return ChunkingConfig()


def _reassemble_chunks(store_dir: str, cfg: ChunkingConfig) -> int:
    paths = StorePaths(store_dir)
    bundles = load_store_bundles(store_dir)
    rows = []
    for doc_id in sorted(bundles):
        rows.extend(chunk_to_dict(c) for c in assemble_chunks(bundles[doc_id], cfg))
    _write_jsonl(paths.chunks, rows)
    return len(rows)


def ingest_bundle(
    store_dir: str,
    bundle: str | dict,
    cfg: ChunkingConfig | None = None,
) -> dict:
    """Validate and normalize one bundle into the store, then rebuild chunks.

    ``bundle`` is a path to a bundle JSON file (image refs are rewritten
    from its directory to the store) or an already-parsed dict whose refs
    must resolve from the store directory.
    """
    cfg = cfg or ChunkingConfig()
    cfg.validate()
    paths = StorePaths(store_dir)
    os.makedirs(paths.bundles_dir, exist_ok=True)

    if isinstance(bundle, str):
        parsed = load_bundle(bundle)
        parsed = _rebase_bundle(parsed, os.path.dirname(os.path.abspath(bundle)), store_dir)
    else:
        parsed = validate_bundle(bundle)

    _write_json(os.path.join(paths.bundles_dir, f"{_safe_name(parsed.doc_id)}.json"), bundle_to_dict(parsed))
    _write_json(
        paths.chunking,
        {"max_window": cfg.max_window, "overlap": cfg.overlap, "tokenizer_id": cfg.tokenizer_id},
    )
    total = _reassemble_chunks(store_dir, cfg)
    docs = len(load_store_bundles(store_dir))
    return {"doc_id": parsed.doc_id, "documents": docs, "chunks": total}


def _safe_name(doc_id: str) -> str:
    import re

    return re.sub(r"[^A-Za-z0-9_.-]", "_", doc_id)


def load_store_chunks(store_dir: str):
    paths = StorePaths(store_dir)
    return [chunk_from_dict(raw) for raw in _read_jsonl(paths.chunks, "run ingest first")]


# ---------------------------------------------------------------------------
# generation

def run_generation(store_dir: str, gateway, cfg: GenerationConfig | None = None) -> dict:
    """Generate query nodes for every chunk and persist them."""
    cfg = cfg or GenerationConfig()
    cfg.validate()
    paths = StorePaths(store_dir)
    chunks = load_store_chunks(store_dir)
    bundles = load_store_bundles(store_dir)

    skipped: list[str] = []
    rows = []
    total = 0
    for chunk in chunks:
        page = None
        render_path = None
        if cfg.mode == "page_context":
            bundle = bundles.get(chunk.doc_id)
            if bundle is None:
                raise MissingStoreError(f"bundle for {chunk.doc_id} not found in store")
            page_index = chunk.page_indices[0] if chunk.page_indices else 0
            page = bundle.pages[page_index]
            if not page.render_ref:
                raise ConfigurationError(
                    f"page_context mode needs a render for page {page_index} of {chunk.doc_id}"
                )
            render_path = _resolve_ref(store_dir, page.render_ref)
        prompt_chunk = chunk
        if chunk.image_ref:
            prompt_chunk = replace(chunk, image_ref=_resolve_ref(store_dir, chunk.image_ref))
        nodes = generate_queries_for_chunk(
            prompt_chunk, page, cfg, gateway, page_render_path=render_path, skipped=skipped
        )
        rows.extend(node_to_record(n) for n in nodes)
        total += len(nodes)

    _write_jsonl(paths.generated_queries, rows)
    meta = {
        "mode": cfg.mode,
        "max_pairs": cfg.max_pairs,
        "repr": cfg.repr,
        "prompt_version": cfg.prompt_version,
        "chunks": len(chunks),
        "queries": total,
        "skipped": skipped,
    }
    _write_json(paths.generation_meta, meta)
    return meta


# ---------------------------------------------------------------------------
# build

def run_build(
    store_dir: str,
    gateway,
    k: int = 3,
    epsilon: float = 1.0,
    filter_enabled: bool = True,
    policy: VisualFilterPolicy | None = None,
    batch_size: int = 64,
) -> dict:
    """Filter visual noise, embed query nodes, assemble and persist the graph."""
    paths = StorePaths(store_dir)
    chunks = load_store_chunks(store_dir)
    raw_nodes = [
        node_from_record(raw)
        for raw in _read_jsonl(paths.generated_queries, "run generate first")
    ]
    meta = _read_json(paths.generation_meta, "run generate first")
    repr_mode = meta.get("repr", "query_plus_answer")

    with StoreLock(store_dir):
        result = filter_visual_noise(
            chunks,
            classifier=lambda ref: gateway.classify_image(_resolve_ref(store_dir, ref), policy),
            policy=policy,
            enabled=filter_enabled,
        )
        kept_ids = {c.chunk_id for c in result.chunks}
        nodes = [n for n in raw_nodes if n.chunk_id in kept_ids]
        embedded = embed_query_nodes(nodes, repr_mode, gateway, batch_size=batch_size)
        params = GraphParams(k=k, epsilon=epsilon, repr=repr_mode)
        graph = build_graph(result.chunks, embedded, params)
        save_graph(graph, paths.graph_dir)

        report = {
            "chunks_total": len(chunks),
            "chunks_kept": len(result.chunks),
            "chunks_dropped": result.dropped_chunk_ids,
            "filter_warnings": result.warning_count,
            "filter_enabled": filter_enabled,
            "queries_total": len(raw_nodes),
            "queries_kept": len(embedded),
            "skipped_chunks": meta.get("skipped", []),
            "params": {
                "k": graph.params.k,
                "epsilon": graph.params.epsilon,
                "dim": graph.params.dim,
                "repr": graph.params.repr,
            },
        }
        _write_json(paths.build_report, report)
    return report


def load_store_graph(store_dir: str) -> McqGraph:
    return load_graph(StorePaths(store_dir).graph_dir)


# ---------------------------------------------------------------------------
# query / answer

def run_query(store_dir: str, gateway, user_query: str, cfg: RetrievalConfig | None = None) -> dict:
    graph = load_store_graph(store_dir)
    result = retrieve(graph, user_query, cfg or RetrievalConfig(), gateway)
    return result.to_dict()


def _context_chunks(graph: McqGraph, ranked_ids) :
    return [graph.chunks[cid] for cid in ranked_ids]


def _page_renders_for(store_dir: str, graph: McqGraph, chunks) -> dict:
    bundles = load_store_bundles(store_dir)
    renders: dict[str, list[str]] = {}
    for chunk in chunks:
        bundle = bundles.get(chunk.doc_id)
        if bundle is None:
            raise MissingStoreError(f"bundle for {chunk.doc_id} not found in store")
        paths = []
        for page_index in chunk.page_indices:
            render = bundle.pages[page_index].render_ref
            if not render:
                raise ConfigurationError(
                    f"page_context answering needs a render for page {page_index} of {chunk.doc_id}"
                )
            paths.append(_resolve_ref(store_dir, render))
        renders[chunk.chunk_id] = paths
    return renders


def _resolved_context(store_dir: str, chunks):
    out = []
    for chunk in chunks:
        if chunk.image_ref:
            out.append(replace(chunk, image_ref=_resolve_ref(store_dir, chunk.image_ref)))
        else:
            out.append(chunk)
    return out


def run_answer(
    store_dir: str,
    gateway,
    user_query: str,
    cfg: RetrievalConfig | None = None,
    mode: str = ANSWER_PLAIN,
) -> dict:
    cfg = cfg or RetrievalConfig()
    graph = load_store_graph(store_dir)
    result = retrieve(graph, user_query, cfg, gateway)
    context = _context_chunks(graph, [rc.chunk_id for rc in result.ranked])
    resolved = _resolved_context(store_dir, context)
    renders = _page_renders_for(store_dir, graph, context) if mode == ANSWER_PAGE else None
    if resolved:
        full, final = generate_answer(gateway, user_query, resolved, mode, renders)
    else:
        full, final = "I don't know.", "I don't know."
    return {
        "answer": full,
        "final_answer": final,
        "context": [
            {"chunk_id": rc.chunk_id, "score": rc.score}
            for rc in result.ranked
        ],
    }


# ---------------------------------------------------------------------------
# evaluation

def _rank_for_method(
    store_dir: str,
    graph: McqGraph,
    gateway,
    method: str,
    question: str,
    cfg: RetrievalConfig,
    dense_cache: dict,
):
    """Ranked (chunk_id, score) context for one question under one method."""
    if method == "mcqg":
        result = retrieve(graph, question, cfg, gateway)
        return [(rc.chunk_id, rc.score) for rc in result.ranked]
    text_chunks = [c for cid, c in sorted(graph.chunks.items()) if c.modality == "text"]
    if method == "bm25":
        return bm25_retrieve(text_chunks, question, cfg.K)
    if method == "dense":
        if "embeddings" not in dense_cache:
            embs = {}
            if text_chunks:
                vectors = gateway.embed_texts([c.text_content for c in text_chunks])
                embs = {c.chunk_id: v for c, v in zip(text_chunks, vectors)}
            dense_cache["embeddings"] = embs
        if not dense_cache["embeddings"]:
            return []
        user_emb = gateway.embed_texts([question])[0]
        return dense_chunk_retrieve(dense_cache["embeddings"], user_emb, cfg.K)
    raise ConfigurationError(f"unknown eval method: {method!r}")


def run_eval(
    store_dir: str,
    gateway,
    dataset_path: str,
    method: str = "mcqg",
    cfg: RetrievalConfig | None = None,
    mode: str = ANSWER_PLAIN,
    out_path: str | None = None,
    graph: McqGraph | None = None,
) -> dict:
    """Answer every dataset row with the chosen retriever and judge it."""
    if method not in EVAL_METHODS:
        raise ConfigurationError(f"unknown eval method: {method!r}")
    cfg = cfg or RetrievalConfig()
    records = load_qa_records(dataset_path)
    if graph is None:
        graph = load_store_graph(store_dir)

    dense_cache: dict = {}
    verdicts = []
    for record in records:
        ranked = _rank_for_method(store_dir, graph, gateway, method, record.question, cfg, dense_cache)
        context = _context_chunks(graph, [cid for cid, _ in ranked])
        resolved = _resolved_context(store_dir, context)
        renders = _page_renders_for(store_dir, graph, context) if mode == ANSWER_PAGE else None
        if resolved:
            _, final = generate_answer(gateway, record.question, resolved, mode, renders)
            candidate = final if final else "I don't know."
        else:
            candidate = "I don't know."
        try:
            verdicts.append(judge(gateway, record, candidate))
        except JudgeParseError:
            verdicts.append(None)

    report = aggregate_accuracy(verdicts, records)
    if out_path:
        _write_json(out_path, report)
    return report


# ---------------------------------------------------------------------------
# sweep

_SWEEP_AXES = (
    ("h_values", "h"),
    ("k_values", "k"),
    ("n_values", "n"),
    ("alpha_values", "alpha"),
    ("K_values", "K"),
    ("agg_values", "agg"),
    ("repr_values", "repr"),
)


def _grid_points(grid: dict, graph_repr: str) -> list[dict]:
    defaults = {
        "h_values": [2],
        "k_values": [3],
        "n_values": [10],
        "alpha_values": [1.2],
        "K_values": [5],
        "agg_values": ["max"],
        "repr_values": [graph_repr],
    }
    axes = []
    for key, name in _SWEEP_AXES:
        values = grid.get(key, defaults[key])
        if not isinstance(values, list) or not values:
            raise InputError(f"sweep grid {key} must be a non-empty list")
        axes.append([(name, v) for v in values])
    return [dict(combo) for combo in product(*axes)]


def run_sweep(
    store_dir: str,
    gateway,
    grid: dict,
    dataset_path: str,
    out_csv: str,
    cap: int = DEFAULT_SWEEP_CAP,
) -> dict:
    """Evaluate every grid point and write one CSV row per point."""
    base = load_store_graph(store_dir)
    points = _grid_points(grid, base.params.repr)
    if len(points) > cap:
        raise ConfigurationError(f"sweep grid has {len(points)} points, cap is {cap}")

    records = load_qa_records(dataset_path)
    sources = sorted({s for r in records for s in r.evidence_sources})
    scopes = sorted({r.page_scope for r in records})
    header = (
        ["h", "k", "n", "alpha", "K", "agg", "repr", "overall", "n_rows", "excluded"]
        + [f"src_{s}" for s in sources]
        + [f"scope_{s}" for s in scopes]
    )

    # embeddings per representation, graphs per (k, repr)
    plain_nodes = [replace(n, embedding=None) for n in base.queries.values()]
    plain_nodes.sort(key=lambda n: n.query_id)
    chunks = list(base.chunks.values())
    embedded_cache: dict[str, list] = {}
    graph_cache: dict[tuple, McqGraph] = {}

    def graph_for(k: int, repr_mode: str) -> McqGraph:
        key = (k, repr_mode)
        if key not in graph_cache:
            if repr_mode == base.params.repr and k == base.params.k:
                graph_cache[key] = base
            else:
                if repr_mode not in embedded_cache:
                    if repr_mode == base.params.repr:
                        embedded_cache[repr_mode] = list(base.queries.values())
                    else:
                        embedded_cache[repr_mode] = embed_query_nodes(plain_nodes, repr_mode, gateway)
                params = GraphParams(k=k, epsilon=base.params.epsilon, repr=repr_mode)
                graph_cache[key] = build_graph(chunks, embedded_cache[repr_mode], params)
        return graph_cache[key]

    rows = []
    for point in points:
        graph = graph_for(int(point["k"]), point["repr"])
        cfg = RetrievalConfig(
            n=int(point["n"]),
            alpha=float(point["alpha"]),
            h=int(point["h"]),
            K=int(point["K"]),
            agg=point["agg"],
        )
        report = run_eval(
            store_dir, gateway, dataset_path, method="mcqg", cfg=cfg, graph=graph
        )
        row = [
            point["h"], point["k"], point["n"], point["alpha"], point["K"],
            point["agg"], point["repr"],
            repr(report["overall"]), report["n"], report["excluded"],
        ]
        row += [_fmt_acc(report["by_source"].get(s)) for s in sources]
        row += [_fmt_acc(report["by_scope"].get(s)) for s in scopes]
        rows.append(row)

    with open(out_csv, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return {"points": len(points), "out": out_csv}


def _fmt_acc(value) -> str:
    return "" if value is None else repr(value)


def run_stats(store_dir: str) -> dict:
    graph = load_store_graph(store_dir)
    return {
        "counts": graph.counts(),
        "params": {
            "k": graph.params.k,
            "epsilon": graph.params.epsilon,
            "dim": graph.params.dim,
            "repr": graph.params.repr,
        },
    }
