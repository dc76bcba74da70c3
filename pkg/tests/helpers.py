"""Glue between the mock server and the package under test."""

from __future__ import annotations

import numpy as np

from mldoc.gateway import Embedding, EndpointConfig, ModelGateway, normalize_vector
from wire_mock import DEFAULT_DIM, DEFAULT_SEED, hash_raw_vector


def make_gateway(base_url: str, api_key: str | None = None, max_retries: int = 2) -> ModelGateway:
    """All three endpoints pointed at one mock server, with no retry sleeps."""

    def cfg(model: str) -> EndpointConfig:
        return EndpointConfig(
            base_url=base_url,
            model_name=model,
            api_key=api_key,
            timeout=10.0,
            max_retries=max_retries,
            backoff=(0.0, 0.0, 0.0),
        )

    return ModelGateway(embed=cfg("embedder"), lvlm=cfg("lvlm"), judge=cfg("judge"))


def hash_embedding(text: str, seed: str = DEFAULT_SEED, dim: int = DEFAULT_DIM) -> Embedding:
    """What the gateway yields for a text embedded through the mock server."""
    return normalize_vector(hash_raw_vector(seed, text, dim))


def unit_vector(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    return (arr / np.linalg.norm(arr)).astype(np.float32)


def random_unit_rows(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    rows = rng.standard_normal((count, dim))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)
