"""Command line client over the pipeline stages.

Exit codes: 0 on success, 2 for usage errors, 3 when a required store
artifact is missing, 1 for everything else. Failures print one JSON line
to stderr with the same envelope the HTTP service uses.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .corpus import ChunkingConfig
from .doc2query import GenerationConfig
from .errors import MissingStoreError, MldocError
from .gateway import ModelGateway
from .pipeline import (
    DEFAULT_SWEEP_CAP,
    ingest_bundle,
    run_answer,
    run_build,
    run_eval,
    run_generation,
    run_query,
    run_sweep,
)
from .retrieval import RetrievalConfig

log = logging.getLogger(__name__)

_REPR_ALIASES = {"qa": "query_plus_answer", "q": "query_only", "a": "answer_only"}
_MODE_ALIASES = {"chunk": "chunk_only", "page": "page_context"}


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, ensure_ascii=False))


def _gateway(args) -> ModelGateway:
    return ModelGateway.from_env(
        embed_url=getattr(args, "embed_url", None),
        lvlm_url=getattr(args, "lvlm_url", None),
        judge_url=getattr(args, "judge_url", None),
        api_key=getattr(args, "api_key", None),
    )


def _add_gateway_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--embed-url", help="embedding endpoint, overrides MLDOC_EMBED_URL")
    parser.add_argument("--lvlm-url", help="vision-language endpoint, overrides MLDOC_LVLM_URL")
    parser.add_argument("--judge-url", help="judge endpoint, overrides MLDOC_JUDGE_URL")
    parser.add_argument("--api-key", help="bearer token, overrides MLDOC_API_KEY")


def _add_retrieval_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n", type=int, default=10, help="entry node budget")
    parser.add_argument("--alpha", type=float, default=1.2, help="entry similarity threshold")
    parser.add_argument("--hops", type=int, default=2, help="expansion depth over query-query edges")
    parser.add_argument("--topk", type=int, default=5, help="context chunks returned")
    parser.add_argument("--agg", choices=["max", "mean"], default="max", help="supporter aggregation")


def _retrieval_config(args) -> RetrievalConfig:
    return RetrievalConfig(n=args.n, alpha=args.alpha, h=args.hops, K=args.topk, agg=args.agg)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mldoc", description=__doc__)
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and normalize a bundle into a store")
    p.add_argument("--input", required=True, help="bundle JSON file")
    p.add_argument("--store", required=True, help="store directory")
    p.add_argument("--max-window", type=int, default=1200)
    p.add_argument("--overlap", type=int, default=100)
    p.add_argument("--tokenizer", default="simple")

    p = sub.add_parser("generate", help="generate query nodes for every chunk")
    p.add_argument("--store", required=True)
    p.add_argument("--mode", choices=["chunk", "page"], default="chunk")
    p.add_argument("--max-queries", type=int, default=20)
    p.add_argument("--repr", choices=["qa", "q", "a"], default="qa")
    _add_gateway_args(p)

    p = sub.add_parser("build", help="filter, embed, and persist the graph")
    p.add_argument("--store", required=True)
    p.add_argument("--k", type=int, default=3, help="query-query neighbors per node")
    p.add_argument("--epsilon", type=float, default=1.0, help="similarity offset")
    p.add_argument("--no-filter", action="store_true", help="keep all image chunks")
    _add_gateway_args(p)

    p = sub.add_parser("query", help="retrieve context for a query, printing provenance")
    p.add_argument("--store", required=True)
    p.add_argument("--q", required=True, help="user query text")
    _add_retrieval_args(p)
    _add_gateway_args(p)

    p = sub.add_parser("answer", help="retrieve and answer")
    p.add_argument("--store", required=True)
    p.add_argument("--q", required=True)
    p.add_argument("--page-context", action="store_true", help="attach page renders")
    _add_retrieval_args(p)
    _add_gateway_args(p)

    p = sub.add_parser("eval", help="run a QA dataset and report accuracy")
    p.add_argument("--store", required=True)
    p.add_argument("--dataset", required=True, help="QA records, JSON lines")
    p.add_argument("--method", choices=["mcqg", "bm25", "dense"], default="mcqg")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--page-context", action="store_true")
    _add_retrieval_args(p)
    _add_gateway_args(p)

    p = sub.add_parser("sweep", help="evaluate a parameter grid, one CSV row per point")
    p.add_argument("--store", required=True)
    p.add_argument("--grid", required=True, help="grid JSON file")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--cap", type=int, default=DEFAULT_SWEEP_CAP, help="max grid points")
    _add_gateway_args(p)

    p = sub.add_parser("serve", help="serve the HTTP API over a corpora root")
    p.add_argument("--store", required=True, help="corpora root directory")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    return parser


def _dispatch(args) -> int:
    if args.command == "ingest":
        cfg = ChunkingConfig(
            max_window=args.max_window, overlap=args.overlap, tokenizer_id=args.tokenizer
        )
        _print(ingest_bundle(args.store, args.input, cfg))
        return 0

    if args.command == "generate":
        cfg = GenerationConfig(
            mode=_MODE_ALIASES[args.mode],
            max_pairs=args.max_queries,
            repr=_REPR_ALIASES[args.repr],
        )
        _print(run_generation(args.store, _gateway(args), cfg))
        return 0

    if args.command == "build":
        report = run_build(
            args.store,
            _gateway(args),
            k=args.k,
            epsilon=args.epsilon,
            filter_enabled=not args.no_filter,
        )
        _print(report)
        return 0

    if args.command == "query":
        _print(run_query(args.store, _gateway(args), args.q, _retrieval_config(args)))
        return 0

    if args.command == "answer":
        mode = "page_context" if args.page_context else "plain"
        _print(run_answer(args.store, _gateway(args), args.q, _retrieval_config(args), mode=mode))
        return 0

    if args.command == "eval":
        mode = "page_context" if args.page_context else "plain"
        report = run_eval(
            args.store,
            _gateway(args),
            args.dataset,
            method=args.method,
            cfg=_retrieval_config(args),
            mode=mode,
            out_path=args.out,
        )
        _print(report)
        return 0

    if args.command == "sweep":
        with open(args.grid, encoding="utf-8") as fh:
            grid = json.load(fh)
        _print(
            run_sweep(
                args.store, _gateway(args), grid, args.dataset, args.out, cap=args.cap
            )
        )
        return 0

    if args.command == "serve":
        import uvicorn

        from .service import create_app

        app = create_app(args.store)
        uvicorn.run(app, host=args.host, port=args.port, log_level="info")
        return 0

    raise AssertionError(f"unhandled command {args.command}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return _dispatch(args)
    except MissingStoreError as exc:
        print(json.dumps({"error": {"code": exc.code, "message": str(exc)}}), file=sys.stderr)
        return 3
    except MldocError as exc:
        print(json.dumps({"error": {"code": exc.code, "message": str(exc)}}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
