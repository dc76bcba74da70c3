"""Query-centric multimodal retrieval over document corpora."""

from .corpus import Chunk, ChunkingConfig, DocumentBundle, assemble_chunks, load_bundle
from .doc2query import GenerationConfig, QueryNode
from .errors import MldocError
from .gateway import ModelGateway
from .graph import GraphParams, McqGraph, build_graph, sim
from .retrieval import RetrievalConfig, retrieve
from .store import load_graph, save_graph

__version__ = "0.1.0"

__all__ = [
    "Chunk",
    "ChunkingConfig",
    "DocumentBundle",
    "GenerationConfig",
    "GraphParams",
    "McqGraph",
    "MldocError",
    "ModelGateway",
    "QueryNode",
    "RetrievalConfig",
    "assemble_chunks",
    "build_graph",
    "load_bundle",
    "load_graph",
    "retrieve",
    "save_graph",
    "sim",
    "__version__",
]
