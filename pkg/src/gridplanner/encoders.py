"""Frozen text backbones: a hash-seeded toy encoder and an HTTP client."""
from __future__ import annotations

import hashlib
import json
import os
import re
import time
from dataclasses import asdict, dataclass

import numpy as np

from .graphs import Graph, check_graph

_PUNCT = re.compile(r"^[^\w]+|[^\w]+$")


class EmptyText(ValueError):
    pass


class ExternalServiceError(RuntimeError):
    def __init__(self, message: str, attempts: int, status: int | None = None):
        super().__init__(f"{message} (after {attempts} attempt(s))")
        self.attempts = attempts
        self.status = status


@dataclass(frozen=True)
class EmbeddingBundle:
    word_tokens: np.ndarray
    sentence_embedding: np.ndarray

    @property
    def dim(self) -> int:
        return self.sentence_embedding.shape[0]


@dataclass(frozen=True)
class EncoderConfig:
    dim: int = 64
    backend: str = "toy"
    endpoint_env: str = "GRID_EMBED_URL"
    key_env: str = "GRID_EMBED_KEY"
    timeout: float = 30.0
    retries: int = 2

    def __post_init__(self):
        if self.dim < 8:
            raise ValueError(f"embedding dim must be >= 8, got {self.dim}")
        if self.backend not in ("toy", "external"):
            raise ValueError(f"unknown encoder backend {self.backend!r}")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def tokenize(text: str) -> list[str]:
    """Whitespace split, lowercased, with edge punctuation stripped."""
    words = []
    for raw in text.split():
        w = _PUNCT.sub("", raw.lower())
        if w:
            words.append(w)
    return words


def word_seed(word: str) -> int:
    return int.from_bytes(hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest(), "little")


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


class ToyEncoder:
    """Deterministic stand-in for a frozen sentence encoder.

    Each lowercased word maps to a unit vector drawn from a generator seeded by
    a 64-bit BLAKE2 hash of the word; a sentence embedding is the normalized
    mean of its word vectors.
    """

    def __init__(self, config: EncoderConfig | None = None):
        self.config = config or EncoderConfig()
        self.dim = self.config.dim
        self._words: dict[str, np.ndarray] = {}
        self._sentences: dict[str, EmbeddingBundle] = {}

    def word_vector(self, word: str) -> np.ndarray:
        v = self._words.get(word)
        if v is None:
            v = _unit(np.random.default_rng(word_seed(word)).standard_normal(self.dim))
            v.setflags(write=False)
            self._words[word] = v
        return v

    def encode_sentence(self, text: str) -> EmbeddingBundle:
        cached = self._sentences.get(text)
        if cached is not None:
            return cached
        words = tokenize(text)
        if not words:
            raise EmptyText(f"nothing to encode in {text!r}")
        tokens = np.stack([self.word_vector(w) for w in words])
        sent = _unit(tokens.mean(axis=0))
        tokens.setflags(write=False)
        sent.setflags(write=False)
        bundle = EmbeddingBundle(tokens, sent)
        self._sentences[text] = bundle
        return bundle


class ExternalEncoder:
    """Client for an embedding service speaking
    ``{texts: [...]} -> {embeddings: [[...]], tokens: [[[...]]]}``.

    Endpoint and key come from the environment variables named in the config.
    ``transport`` is passed straight to :class:`httpx.Client` (tests use
    ``httpx.MockTransport``).
    """

    def __init__(self, config: EncoderConfig | None = None, transport=None, endpoint: str | None = None):
        import httpx

        self.config = config or EncoderConfig(backend="external")
        self.endpoint = endpoint or os.environ.get(self.config.endpoint_env)
        if not self.endpoint:
            raise ExternalServiceError(f"no endpoint: set ${self.config.endpoint_env}", attempts=0)
        headers = {}
        key = os.environ.get(self.config.key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(timeout=self.config.timeout, headers=headers, transport=transport)
        self._cache: dict[str, EmbeddingBundle] = {}
        self.dim: int | None = None

    def _post(self, texts: list[str]) -> dict:
        import httpx

        last: Exception | None = None
        status = None
        attempts = self.config.retries + 1
        for attempt in range(1, attempts + 1):
            try:
                resp = self._client.post(self.endpoint, json={"texts": texts})
                status = resp.status_code
                if resp.status_code >= 500:
                    last = RuntimeError(f"HTTP {resp.status_code}")
                elif resp.status_code >= 400:
                    raise ExternalServiceError(f"HTTP {resp.status_code}", attempts=attempt, status=status)
                else:
                    return resp.json()
            except httpx.HTTPError as exc:
                last = exc
            if attempt < attempts:
                time.sleep(min(0.1 * 2 ** (attempt - 1), 2.0))
        raise ExternalServiceError(f"embedding request failed: {last}", attempts=attempts, status=status)

    def encode_many(self, texts: list[str]) -> list[EmbeddingBundle]:
        todo = [t for t in dict.fromkeys(texts) if t not in self._cache]
        for t in todo:
            if not t.strip():
                raise EmptyText("cannot encode empty text")
        if todo:
            payload = self._post(todo)
            embs, toks = payload.get("embeddings"), payload.get("tokens")
            if embs is None or toks is None or len(embs) != len(todo) or len(toks) != len(todo):
                raise ExternalServiceError("malformed embedding response", attempts=1)
            for t, e, w in zip(todo, embs, toks):
                e = np.asarray(e, dtype=np.float64)
                w = np.asarray(w, dtype=np.float64).reshape(-1, e.shape[0])
                if self.dim is None:
                    self.dim = e.shape[0]
                if e.shape[0] != self.dim or not (np.isfinite(e).all() and np.isfinite(w).all()):
                    raise ExternalServiceError("inconsistent or non-finite embedding", attempts=1)
                self._cache[t] = EmbeddingBundle(w, e)
        return [self._cache[t] for t in texts]

    def encode_sentence(self, text: str) -> EmbeddingBundle:
        if not text.strip():
            raise EmptyText("cannot encode empty text")
        return self.encode_many([text])[0]


def make_encoder(config: EncoderConfig, **kwargs):
    if config.backend == "toy":
        return ToyEncoder(config)
    return ExternalEncoder(config, **kwargs)


def node_texts(g: Graph) -> list[str]:
    """Per-node attribute sentences (no ids), in the graph's node order."""
    return [n.label for n in g.nodes]


def encode_nodes(g: Graph, encoder) -> np.ndarray:
    """``len(g) x d`` node-token matrix, one sentence embedding per node.

    Scene rows follow ascending id; robot rows follow the robot graph's
    canonical order (robot, held object, move target, remaining by label).
    """
    check_graph(g)
    texts = node_texts(g)
    if hasattr(encoder, "encode_many"):
        bundles = encoder.encode_many(texts)
    else:
        bundles = [encoder.encode_sentence(t) for t in texts]
    return np.stack([b.sentence_embedding for b in bundles])


__all__ = [
    "EmbeddingBundle",
    "EncoderConfig",
    "EmptyText",
    "ExternalEncoder",
    "ExternalServiceError",
    "ToyEncoder",
    "encode_nodes",
    "make_encoder",
    "node_texts",
    "tokenize",
]
