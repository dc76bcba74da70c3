"""HTTP client for OpenAI-compatible model endpoints.

Three capabilities sit behind one wire protocol: text and image embedding
via POST {base}/v1/embeddings, vision-language chat via POST
{base}/v1/chat/completions, and zero-shot image classification composed
from embeddings. Embeddings are renormalized client side so the rest of
the engine can rely on unit vectors regardless of server behavior.
"""

from __future__ import annotations

import base64
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import httpx
import numpy as np

from .errors import (
    CapabilityError,
    ConfigurationError,
    ContextOverflowError,
    GatewayError,
    InputError,
    ProtocolError,
)
from .filtering import VisualFilterPolicy, default_policy

log = logging.getLogger(__name__)

ENV_EMBED_URL = "MLDOC_EMBED_URL"
ENV_LVLM_URL = "MLDOC_LVLM_URL"
ENV_JUDGE_URL = "MLDOC_JUDGE_URL"
ENV_API_KEY = "MLDOC_API_KEY"

_UNIT_NORM_TOL = 1e-6


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_name: str = "default"
    api_key: str | None = None
    timeout: float = 60.0
    max_retries: int = 2
    backoff: tuple[float, ...] = (0.5, 1.0, 2.0)


@dataclass(frozen=True)
class DecodeConfig:
    temperature: float = 0.2
    max_output_tokens: int = 1024


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    """Reference to a local image file, inlined as base64 at send time."""

    path: str


@dataclass(frozen=True)
class ChatMessage:
    role: str  # "system" | "user" | "assistant"
    parts: tuple = ()


class Embedding:
    """A unit-norm vector stored as little-endian float32."""

    __slots__ = ("values",)

    def __init__(self, values: np.ndarray):
        self.values = values

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def tolist(self) -> list[float]:
        return self.values.tolist()

    def __repr__(self) -> str:
        return f"Embedding(dim={self.dim})"


def normalize_vector(values: Sequence[float]) -> Embedding:
    """Project raw endpoint output onto the unit sphere, in float32."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] == 0:
        raise ProtocolError("embedding must be a non-empty flat vector")
    norm = float(np.sqrt(np.multiply(v, v).sum()))
    if norm == 0.0 or not np.isfinite(norm):
        raise ProtocolError("embedding has zero or non-finite norm")
    out = (v / norm).astype(np.float32)
    check = float(np.sqrt(np.multiply(out.astype(np.float64), out.astype(np.float64)).sum()))
    if abs(check - 1.0) > _UNIT_NORM_TOL:
        raise ProtocolError(f"normalized embedding norm {check} outside tolerance")
    return Embedding(out)


def encode_image_data_uri(path: str) -> str:
    ext = os.path.splitext(path)[1].lower().lstrip(".")
    mime = {"jpg": "image/jpeg", "jpeg": "image/jpeg", "png": "image/png"}.get(ext, "image/png")
    try:
        with open(path, "rb") as fh:
            payload = base64.b64encode(fh.read()).decode("ascii")
    except OSError as exc:
        raise InputError(f"cannot read image file {path}: {exc}") from None
    return f"data:{mime};base64,{payload}"


# ---------------------------------------------------------------------------
# transport

def _post_json(cfg: EndpointConfig, path: str, payload: dict, client: httpx.Client | None = None) -> dict:
    """POST with bounded retries on transport errors, 429, and 5xx."""
    url = cfg.base_url.rstrip("/") + path
    headers = {"Content-Type": "application/json"}
    if cfg.api_key:
        headers["Authorization"] = f"Bearer {cfg.api_key}"

    attempts: list[str] = []
    own_client = client is None
    http = client or httpx.Client(timeout=cfg.timeout)
    try:
        for attempt in range(cfg.max_retries + 1):
            try:
                resp = http.post(url, json=payload, headers=headers)
            except httpx.HTTPError as exc:
                attempts.append(f"attempt {attempt + 1}: transport error: {exc}")
                if attempt < cfg.max_retries:
                    time.sleep(cfg.backoff[min(attempt, len(cfg.backoff) - 1)])
                    continue
                raise GatewayError(f"{url} unreachable after {attempt + 1} attempts", attempts) from exc

            if resp.status_code == 200:
                try:
                    return resp.json()
                except ValueError as exc:
                    raise ProtocolError(f"{url} returned non-JSON body") from exc

            body = resp.text[:500]
            attempts.append(f"attempt {attempt + 1}: HTTP {resp.status_code}: {body}")
            if resp.status_code == 429 or resp.status_code >= 500:
                if attempt < cfg.max_retries:
                    time.sleep(cfg.backoff[min(attempt, len(cfg.backoff) - 1)])
                    continue
                raise GatewayError(f"{url} failed with HTTP {resp.status_code}", attempts)

            # non-retryable client error
            lowered = body.lower()
            if resp.status_code == 400 and ("context length" in lowered or "context window" in lowered):
                raise ContextOverflowError(f"{url} rejected request: {body}", attempts)
            raise GatewayError(f"{url} rejected request with HTTP {resp.status_code}: {body}", attempts)
    finally:
        if own_client:
            http.close()
    raise GatewayError(f"{url} failed", attempts)  # unreachable


# ---------------------------------------------------------------------------
# embeddings

def embed_inputs(inputs: Sequence[str], cfg: EndpointConfig, client: httpx.Client | None = None) -> list[Embedding]:
    """Embed a batch of inputs, each a text string or an image data URI."""
    if not inputs:
        raise InputError("embedding batch must be non-empty")
    payload = {"model": cfg.model_name, "input": list(inputs)}
    body = _post_json(cfg, "/v1/embeddings", payload, client=client)
    data = body.get("data")
    if not isinstance(data, list) or len(data) != len(inputs):
        raise ProtocolError(
            f"embeddings response arity mismatch: sent {len(inputs)}, "
            f"got {len(data) if isinstance(data, list) else type(data).__name__}"
        )
    rows: list = [None] * len(inputs)
    for item in data:
        try:
            rows[int(item["index"])] = item["embedding"]
        except (KeyError, TypeError, ValueError, IndexError):
            raise ProtocolError("embeddings response item missing index/embedding") from None
    if any(r is None for r in rows):
        raise ProtocolError("embeddings response does not cover every input index")
    out = [normalize_vector(r) for r in rows]
    dims = {e.dim for e in out}
    if len(dims) > 1:
        raise ProtocolError(f"embedding dimension mismatch within batch: {sorted(dims)}")
    return out


def embed_texts(texts: Sequence[str], cfg: EndpointConfig, client: httpx.Client | None = None) -> list[Embedding]:
    for t in texts:
        if not isinstance(t, str):
            raise InputError("embed_texts accepts strings only")
    return embed_inputs(texts, cfg, client=client)


# ---------------------------------------------------------------------------
# chat

def _encode_part(part) -> dict:
    if isinstance(part, TextPart):
        return {"type": "text", "text": part.text}
    if isinstance(part, ImagePart):
        return {"type": "image_url", "image_url": {"url": encode_image_data_uri(part.path)}}
    raise InputError(f"unsupported message part: {type(part).__name__}")


def encode_messages(messages: Sequence[ChatMessage]) -> list[dict]:
    return [
        {"role": m.role, "content": [_encode_part(p) for p in m.parts]}
        for m in messages
    ]


def chat_complete(
    messages: Sequence[ChatMessage],
    cfg: EndpointConfig,
    decode: DecodeConfig | None = None,
    client: httpx.Client | None = None,
) -> str:
    """Run one chat completion and return the assistant text verbatim."""
    if not messages:
        raise InputError("chat requires at least one message")
    decode = decode or DecodeConfig()
    payload = {
        "model": cfg.model_name,
        "messages": encode_messages(messages),
        "temperature": decode.temperature,
        "max_tokens": decode.max_output_tokens,
    }
    body = _post_json(cfg, "/v1/chat/completions", payload, client=client)
    try:
        content = body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise ProtocolError("chat response missing choices[0].message.content") from None
    if not isinstance(content, str):
        raise ProtocolError("chat response content is not a string")
    return content


# ---------------------------------------------------------------------------
# zero-shot image classification

def classify_image(
    image_path: str,
    policy: VisualFilterPolicy | None = None,
    cfg: EndpointConfig | None = None,
    client: httpx.Client | None = None,
) -> dict[str, float]:
    """Score an image against every policy label.

    Each score is the inner product between the image embedding and the
    embedding of the policy's prompt template instantiated with the label.
    """
    if cfg is None:
        raise ConfigurationError("classify_image requires an embedding endpoint config")
    policy = policy or default_policy()
    policy.validate()
    uri = encode_image_data_uri(image_path)
    prompts = [policy.prompt_template.format(label=label) for label in policy.all_labels]
    try:
        embeddings = embed_inputs([uri] + prompts, cfg, client=client)
    except GatewayError as exc:
        if isinstance(exc, ContextOverflowError):
            raise
        if exc.attempts and any("HTTP 4" in a for a in exc.attempts):
            raise CapabilityError(
                f"embedding endpoint rejected image input: {exc}", exc.attempts
            ) from exc
        raise
    image_vec = embeddings[0].values.astype(np.float64)
    scores: dict[str, float] = {}
    for label, emb in zip(policy.all_labels, embeddings[1:]):
        scores[label] = float(np.multiply(image_vec, emb.values.astype(np.float64)).sum())
    return scores


# ---------------------------------------------------------------------------
# bundled gateway

@dataclass
class ModelGateway:
    """The three endpoints the engine talks to, with convenience methods.

    Any endpoint may be absent; using a missing one raises ConfigurationError
    so offline stages keep working without network setup.
    """

    embed: EndpointConfig | None = None
    lvlm: EndpointConfig | None = None
    judge: EndpointConfig | None = None
    generation_decode: DecodeConfig = field(default_factory=lambda: DecodeConfig(temperature=0.2))
    judge_decode: DecodeConfig = field(default_factory=lambda: DecodeConfig(temperature=0.0))

    @classmethod
    def from_env(
        cls,
        embed_url: str | None = None,
        lvlm_url: str | None = None,
        judge_url: str | None = None,
        api_key: str | None = None,
    ) -> "ModelGateway":
        key = api_key or os.environ.get(ENV_API_KEY)

        def cfg(url: str | None, env: str, model_env: str, default_model: str):
            resolved = url or os.environ.get(env)
            if not resolved:
                return None
            model = os.environ.get(model_env, default_model)
            return EndpointConfig(base_url=resolved, model_name=model, api_key=key)

        return cls(
            embed=cfg(embed_url, ENV_EMBED_URL, "MLDOC_EMBED_MODEL", "embedder"),
            lvlm=cfg(lvlm_url, ENV_LVLM_URL, "MLDOC_LVLM_MODEL", "lvlm"),
            judge=cfg(judge_url, ENV_JUDGE_URL, "MLDOC_JUDGE_MODEL", "judge"),
        )

    def _require(self, cfg: EndpointConfig | None, name: str, env: str) -> EndpointConfig:
        if cfg is None:
            raise ConfigurationError(f"no {name} endpoint configured (set {env})")
        return cfg

    def embed_texts(self, texts: Sequence[str]) -> list[Embedding]:
        return embed_texts(texts, self._require(self.embed, "embedding", ENV_EMBED_URL))

    def generate(self, messages: Sequence[ChatMessage], decode: DecodeConfig | None = None) -> str:
        cfg = self._require(self.lvlm, "vision-language", ENV_LVLM_URL)
        return chat_complete(messages, cfg, decode or self.generation_decode)

    def judge_complete(self, messages: Sequence[ChatMessage]) -> str:
        cfg = self._require(self.judge, "judge", ENV_JUDGE_URL)
        return chat_complete(messages, cfg, self.judge_decode)

    def classify_image(self, image_path: str, policy: VisualFilterPolicy | None = None) -> dict[str, float]:
        cfg = self._require(self.embed, "embedding", ENV_EMBED_URL)
        return classify_image(image_path, policy, cfg)
