"""Document embedding backends and cosine similarity.

The fallback embedder is a deterministic hashed unigram+bigram term-frequency
vector with L2 normalization, so the test suite and offline runs never need a
network. An HTTP backend covers deployments with a real embedding endpoint;
the embedding model identifier is a config string, not a code dependency.
"""

from __future__ import annotations

import hashlib
import math

import requests

from ..textproc import tokenize

FALLBACK_DIMENSIONS = 4096


def _bucket(term: str, dimensions: int) -> int:
    digest = hashlib.sha256(term.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % dimensions


class HashedTfEmbedder:
    """Hashed term-frequency document vectors over unigrams and bigrams."""

    name = "fallback"

    def __init__(self, dimensions: int = FALLBACK_DIMENSIONS):
        self.dimensions = dimensions

    def embed(self, text: str) -> list[float]:
        tokens = tokenize(text)
        terms = list(tokens)
        terms.extend(f"{a} {b}" for a, b in zip(tokens, tokens[1:]))
        vector = [0.0] * self.dimensions
        for term in terms:
            vector[_bucket(term, self.dimensions)] += 1.0
        norm = math.sqrt(sum(v * v for v in vector))
        if norm == 0.0:
            return vector
        return [v / norm for v in vector]


class HttpEmbedder:
    """Embedding endpoint speaking the Ollama-compatible /api/embeddings shape."""

    name = "http"

    def __init__(self, endpoint: str, model: str, timeout_seconds: float = 60.0):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.timeout_seconds = timeout_seconds

    def embed(self, text: str) -> list[float]:
        resp = requests.post(
            f"{self.endpoint}/api/embeddings",
            json={"model": self.model, "prompt": text},
            timeout=self.timeout_seconds,
        )
        resp.raise_for_status()
        embedding = resp.json().get("embedding")
        if not isinstance(embedding, list) or not embedding:
            raise RuntimeError("embedding endpoint returned no vector")
        return [float(v) for v in embedding]


def cosine(u: list[float], v: list[float]) -> float:
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return dot / (nu * nv)


def doc_similarity(a: str, b: str, embedder) -> float:
    """Cosine similarity of two documents under the configured embedder."""
    ua = embedder.embed(a)
    ub = embedder.embed(b)
    if all(x == 0.0 for x in ua) and all(x == 0.0 for x in ub):
        return 1.0 if a == b else 0.0
    return cosine(ua, ub)
