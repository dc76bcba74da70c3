"""FastAPI service exposing the pipeline stages over HTTP.

Each corpus is one store directory under the service root. Handlers call
the same pipeline functions as the CLI, so a request and the equivalent
command produce identical JSON content. Errors share one envelope:
{"error": {"code", "message"}}.
"""

from __future__ import annotations

import logging
import os
import re
import threading

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .. import pipeline
from ..corpus import ChunkingConfig
from ..doc2query import GenerationConfig
from ..errors import (
    ConfigurationError,
    GatewayError,
    InputError,
    MissingStoreError,
    MldocError,
    StoreError,
)
from ..gateway import ModelGateway
from ..retrieval import RetrievalConfig
from . import schemas

log = logging.getLogger(__name__)

_STATUS_BY_CODE = {
    "invalid_input": 400,
    "configuration": 400,
    "generation_parse": 400,
    "judge_parse": 400,
    "store_missing": 404,
    "not_found": 404,
    "store": 409,
    "store_load": 500,
    "gateway": 502,
    "capability": 502,
    "context_overflow": 502,
    "protocol": 502,
    "internal": 500,
}


def _error_response(code: str, message: str, status: int | None = None) -> JSONResponse:
    return JSONResponse(
        status_code=status or _STATUS_BY_CODE.get(code, 500),
        content={"error": {"code": code, "message": message}},
    )


def _retrieval_config(params: schemas.RetrieveParams) -> RetrievalConfig:
    return RetrievalConfig(
        n=params.n, alpha=params.alpha, h=params.hops, K=params.topk, agg=params.agg
    )


def create_app(root: str, gateway: ModelGateway | None = None) -> FastAPI:
    """Build the service around a corpora root directory."""
    os.makedirs(root, exist_ok=True)
    gw = gateway or ModelGateway.from_env()
    app = FastAPI(title="mldoc", version="0.1.0")
    build_locks: dict[str, threading.Lock] = {}
    locks_guard = threading.Lock()

    def corpus_dir(corpus_id: str) -> str:
        if not re.fullmatch(r"[A-Za-z0-9_.-]+", corpus_id):
            raise InputError(f"invalid corpus id: {corpus_id!r}")
        path = os.path.join(root, corpus_id)
        if not os.path.isdir(path):
            raise MissingStoreError(f"unknown corpus: {corpus_id}")
        return path

    def build_lock(corpus_id: str) -> threading.Lock:
        with locks_guard:
            return build_locks.setdefault(corpus_id, threading.Lock())

    @app.exception_handler(MldocError)
    async def mldoc_error_handler(_: Request, exc: MldocError):
        return _error_response(exc.code, str(exc))

    @app.exception_handler(RequestValidationError)
    async def validation_error_handler(_: Request, exc: RequestValidationError):
        return _error_response("invalid_input", str(exc), status=400)

    @app.exception_handler(Exception)
    async def fallback_error_handler(_: Request, exc: Exception):
        log.exception("unhandled service error")
        return _error_response("internal", str(exc))

    @app.post("/v1/corpora", response_model=schemas.CreateCorpusResponse)
    def create_corpus(req: schemas.CreateCorpusRequest):
        corpus_id = re.sub(r"[^A-Za-z0-9_.-]", "_", req.bundle.doc_id)
        if not corpus_id:
            raise InputError("bundle doc_id produces an empty corpus id")
        store = os.path.join(root, corpus_id)
        cfg = ChunkingConfig(
            max_window=req.max_window, overlap=req.overlap, tokenizer_id=req.tokenizer_id
        )
        summary = pipeline.ingest_bundle(store, req.bundle.model_dump(), cfg)
        return schemas.CreateCorpusResponse(
            corpus_id=corpus_id, documents=summary["documents"], chunks=summary["chunks"]
        )

    @app.post("/v1/corpora/{corpus_id}/build", response_model=schemas.BuildResponse)
    def build_corpus(corpus_id: str, req: schemas.BuildRequest):
        store = corpus_dir(corpus_id)
        lock = build_lock(corpus_id)
        if not lock.acquire(timeout=60.0):
            raise StoreError(f"a build is already running for {corpus_id}")
        try:
            gen_cfg = GenerationConfig(mode=req.mode, max_pairs=req.max_queries, repr=req.repr)
            pipeline.run_generation(store, gw, gen_cfg)
            report = pipeline.run_build(
                store, gw, k=req.k, epsilon=req.epsilon, filter_enabled=req.filter_visuals
            )
        finally:
            lock.release()
        return schemas.BuildResponse(**report)

    @app.post("/v1/corpora/{corpus_id}/retrieve", response_model=schemas.RetrieveResponse)
    def retrieve_endpoint(corpus_id: str, req: schemas.RetrieveRequest):
        store = corpus_dir(corpus_id)
        body = pipeline.run_query(store, gw, req.query, _retrieval_config(req.config))
        return schemas.RetrieveResponse(**body)

    @app.post("/v1/corpora/{corpus_id}/answer", response_model=schemas.AnswerResponse)
    def answer_endpoint(corpus_id: str, req: schemas.AnswerRequest):
        store = corpus_dir(corpus_id)
        if req.mode not in ("plain", "page_context"):
            raise ConfigurationError(f"unknown answer mode: {req.mode!r}")
        body = pipeline.run_answer(
            store, gw, req.query, _retrieval_config(req.config), mode=req.mode
        )
        return schemas.AnswerResponse(**body)

    @app.get("/v1/corpora/{corpus_id}/stats", response_model=schemas.StatsResponse)
    def stats_endpoint(corpus_id: str):
        store = corpus_dir(corpus_id)
        body = pipeline.run_stats(store)
        return schemas.StatsResponse(corpus_id=corpus_id, **body)

    return app
