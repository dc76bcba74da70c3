from __future__ import annotations

import pytest

from corpus_factory import make_fact_bundle, write_bundle
from helpers import make_gateway
from wire_mock import MockModelServer

from mldoc.corpus import ChunkingConfig
from mldoc.doc2query import GenerationConfig
from mldoc.pipeline import ingest_bundle, load_store_graph, run_build, run_generation

# three documents, distinct item namespaces; window 40 / overlap 8 keeps
# chunks small enough that one store covers the oracle suites comfortably
GRID_DOCS = (("doc-a", "A"), ("doc-b", "B"), ("doc-d", "D"))
GRID_ITEMS_PER_DOC = 290
GRID_CHUNKING = ChunkingConfig(max_window=40, overlap=8)


@pytest.fixture(scope="session")
def mock_server():
    with MockModelServer() as server:
        yield server


@pytest.fixture(scope="session")
def gateway(mock_server):
    return make_gateway(mock_server.base_url)


@pytest.fixture(scope="session")
def grid_store(tmp_path_factory, mock_server) -> str:
    """A built store over the synthetic fact corpus; shared, never mutated."""
    root = tmp_path_factory.mktemp("grid-corpus")
    store = str(root / "store")
    gw = make_gateway(mock_server.base_url)
    for doc_id, tag in GRID_DOCS:
        path = write_bundle(str(root / f"{doc_id}.json"), make_fact_bundle(doc_id, tag, GRID_ITEMS_PER_DOC))
        ingest_bundle(store, path, GRID_CHUNKING)
    run_generation(store, gw, GenerationConfig(mode="chunk_only"))
    run_build(store, gw, k=3, epsilon=1.0)
    return store


@pytest.fixture(scope="session")
def grid_graph(grid_store):
    return load_store_graph(grid_store)
