"""Text embeddings: pluggable providers, cosine similarity, caching, top-K retrieval.

The gateway is provider-agnostic. Three providers ship here:

* ``MockEmbeddingProvider`` — deterministic offline hashing of tokens and
  character trigrams into a fixed number of buckets; shared tokens between
  two texts raise their cosine similarity. Used throughout the test suite.
* ``ScriptedEmbeddingProvider`` — replays vectors recorded per text digest.
* ``HttpEmbeddingProvider`` — generic HTTP embedding service client.

Vocabulary retrieval is an exhaustive cosine scan; vocabulary sizes here
do not warrant an ANN index.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import threading
import time
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Protocol

from .errors import (
    ContractError,
    DataError,
    DomainError,
    MissingFixtureError,
    TransportError,
)

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")

CACHE_HEADER = {"format": "karpa-embedding-cache", "version": 1}


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class EmbeddingVector:
    """Fixed-length real vector; all values finite."""

    values: tuple[float, ...]

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.values):
            raise ContractError("embedding values must be finite")

    @property
    def dim(self) -> int:
        return len(self.values)


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine similarity, clamped to [-1, 1].

    Raises ``ContractError`` on dimension mismatch and ``DomainError`` if
    either vector is all-zero.
    """
    if a.dim != b.dim:
        raise ContractError(f"dimension mismatch: {a.dim} vs {b.dim}")
    dot = 0.0
    na = 0.0
    nb = 0.0
    for x, y in zip(a.values, b.values):
        dot += x * y
        na += x * x
        nb += y * y
    if na == 0.0 or nb == 0.0:
        raise DomainError("cosine undefined for all-zero vector")
    value = dot / (math.sqrt(na) * math.sqrt(nb))
    return max(-1.0, min(1.0, value))


def mock_embed(text: str, dim: int = 64) -> EmbeddingVector:
    """Deterministic bag-of-features embedding for offline use.

    Lowercases, splits on anything non-alphanumeric (dots and underscores
    included), then hashes every token and every character trigram of each
    token into one of ``dim`` buckets, accumulating counts. The result is
    L2-normalized, so identical texts give identical unit vectors and
    texts sharing tokens score higher cosine.
    """
    if dim < 8:
        raise ContractError(f"mock embedding dim must be >= 8, got {dim}")
    tokens = [t for t in _TOKEN_SPLIT.split(text.lower()) if t]
    if not tokens:
        raise DomainError(f"text has no tokens to embed: {text!r}")
    weights = [0.0] * dim
    for token in tokens:
        weights[zlib.crc32(token.encode("utf-8")) % dim] += 1.0
        for i in range(len(token) - 2):
            weights[zlib.crc32(token[i : i + 3].encode("utf-8")) % dim] += 1.0
    norm = math.sqrt(sum(w * w for w in weights))
    return EmbeddingVector(tuple(w / norm for w in weights))


class EmbeddingProvider(Protocol):
    identity: str

    def embed_batch(self, texts: list[str]) -> list[EmbeddingVector]: ...


class MockEmbeddingProvider:
    def __init__(self, dim: int = 64):
        if dim < 8:
            raise ContractError(f"mock embedding dim must be >= 8, got {dim}")
        self.dim = dim
        self.identity = f"mock:dim={dim}"

    def embed_batch(self, texts: list[str]) -> list[EmbeddingVector]:
        return [mock_embed(t, self.dim) for t in texts]


class ScriptedEmbeddingProvider:
    """Replays vectors from line-JSON records ``{"digest", "dim", "values"}``."""

    def __init__(self, records: dict[str, EmbeddingVector], identity: str = "scripted-embed"):
        self._records = records
        self.identity = identity

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedEmbeddingProvider":
        records: dict[str, EmbeddingVector] = {}
        p = Path(path)
        if not p.exists():
            raise DataError(f"scripted embedding fixture not found: {p}")
        with p.open("r", encoding="utf-8") as fp:
            for line in fp:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                records[obj["digest"]] = EmbeddingVector(tuple(float(v) for v in obj["values"]))
        return cls(records, identity=f"scripted-embed:{p.name}")

    def embed_batch(self, texts: list[str]) -> list[EmbeddingVector]:
        out = []
        for text in texts:
            digest = text_digest(text)
            if digest not in self._records:
                raise MissingFixtureError(digest)
            out.append(self._records[digest])
        return out


def write_embedding_fixtures(path: str | Path, entries: Iterable[tuple[str, EmbeddingVector]]) -> None:
    """Record ``(text, vector)`` pairs for later scripted replay."""
    with Path(path).open("a", encoding="utf-8") as fp:
        for text, vec in entries:
            fp.write(
                json.dumps(
                    {"digest": text_digest(text), "dim": vec.dim, "values": list(vec.values)},
                    separators=(",", ":"),
                )
                + "\n"
            )


class HttpEmbeddingProvider:
    """Client for a generic HTTP embedding service.

    Request: ``POST {"model": <str>, "input": [<str>...]}``.
    Response: ``{"data": [{"index": <int>, "embedding": [<float>...]}...]}``,
    index-aligned to the input. The API key (if any) is read from the
    ``KARPA_EMBED_API_KEY`` environment variable and sent as a bearer token.
    """

    def __init__(self, endpoint: str, model: str, api_key: str | None = None, timeout: float = 30.0):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.identity = f"http:{endpoint}:{model}"

    def embed_batch(self, texts: list[str]) -> list[EmbeddingVector]:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = requests.post(
                self.endpoint,
                json={"model": self.model, "input": texts},
                headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(f"embedding request failed: {exc}") from exc
        if resp.status_code >= 500:
            raise TransportError(f"embedding service returned {resp.status_code}")
        if resp.status_code != 200:
            raise DataError(f"embedding service returned {resp.status_code}: {resp.text[:200]}")
        body = resp.json()
        rows = sorted(body["data"], key=lambda r: r["index"])
        if len(rows) != len(texts):
            raise ContractError(f"embedding service returned {len(rows)} vectors for {len(texts)} inputs")
        return [EmbeddingVector(tuple(float(v) for v in row["embedding"])) for row in rows]


class EmbeddingCache:
    """Append-only embedding cache keyed by (provider identity digest, text digest).

    When backed by a file, records are line-JSON after a version header
    line; writes are atomic per key (guarded by a lock, flushed per line).
    """

    def __init__(self, path: str | Path | None = None):
        self._memory: dict[tuple[str, str], EmbeddingVector] = {}
        self._lock = threading.Lock()
        self._path = Path(path) if path is not None else None
        if self._path is not None and self._path.exists():
            self._load()

    def _load(self) -> None:
        assert self._path is not None
        with self._path.open("r", encoding="utf-8") as fp:
            header_line = fp.readline().strip()
            if header_line:
                header = json.loads(header_line)
                if header.get("format") != CACHE_HEADER["format"]:
                    raise DataError(f"not an embedding cache file: {self._path}")
            for line in fp:
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError:
                    break  # truncated trailing record from an interrupted write
                self._memory[(obj["identity"], obj["text"])] = EmbeddingVector(
                    tuple(float(v) for v in obj["values"])
                )

    def get(self, identity_digest: str, digest: str) -> EmbeddingVector | None:
        return self._memory.get((identity_digest, digest))

    def put(self, identity_digest: str, digest: str, vector: EmbeddingVector) -> None:
        with self._lock:
            if (identity_digest, digest) in self._memory:
                return
            self._memory[(identity_digest, digest)] = vector
            if self._path is not None:
                new_file = not self._path.exists()
                with self._path.open("a", encoding="utf-8") as fp:
                    if new_file:
                        fp.write(json.dumps(CACHE_HEADER, separators=(",", ":")) + "\n")
                    fp.write(
                        json.dumps(
                            {
                                "identity": identity_digest,
                                "text": digest,
                                "dim": vector.dim,
                                "values": list(vector.values),
                            },
                            separators=(",", ":"),
                        )
                        + "\n"
                    )
                    fp.flush()

    def stats(self) -> dict:
        size = self._path.stat().st_size if self._path is not None and self._path.exists() else 0
        return {
            "records": len(self._memory),
            "path": str(self._path) if self._path is not None else None,
            "bytes": size,
        }

    def clear(self) -> None:
        with self._lock:
            self._memory.clear()
            if self._path is not None and self._path.exists():
                self._path.unlink()


class EmbeddingGateway:
    """Cache-first embedding access with retries and top-K similarity retrieval."""

    def __init__(
        self,
        provider: EmbeddingProvider,
        cache: EmbeddingCache | None = None,
        retries: int = 3,
        backoff: float = 0.25,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.provider = provider
        self.cache = cache if cache is not None else EmbeddingCache()
        self._identity_digest = text_digest(provider.identity)
        self._retries = retries
        self._backoff = backoff
        self._sleep = sleep
        self._dim: int | None = None
        self._lock = threading.Lock()

    def _check_dim(self, vec: EmbeddingVector) -> None:
        with self._lock:
            if self._dim is None:
                self._dim = vec.dim
            elif vec.dim != self._dim:
                raise ContractError(f"embedding dim drifted from {self._dim} to {vec.dim}")

    def _call_provider(self, texts: list[str]) -> list[EmbeddingVector]:
        delay = self._backoff
        for attempt in range(self._retries):
            try:
                return self.provider.embed_batch(texts)
            except TransportError:
                if attempt == self._retries - 1:
                    raise
                self._sleep(delay)
                delay *= 2
        raise AssertionError("unreachable")

    def embed(self, texts: list[str]) -> list[EmbeddingVector]:
        """Embed each text, serving cache hits without touching the provider."""
        if not texts:
            raise ContractError("embed requires at least one text")
        if any(not t for t in texts):
            raise ContractError("embed texts must be non-empty")
        digests = [text_digest(t) for t in texts]
        out: list[EmbeddingVector | None] = [None] * len(texts)
        missing: dict[str, list[int]] = {}
        for i, (text, digest) in enumerate(zip(texts, digests)):
            hit = self.cache.get(self._identity_digest, digest)
            if hit is not None:
                out[i] = hit
            else:
                missing.setdefault(text, []).append(i)
        if missing:
            unique = list(missing)
            vectors = self._call_provider(unique)
            if len(vectors) != len(unique):
                raise ContractError(
                    f"provider returned {len(vectors)} vectors for {len(unique)} texts"
                )
            for text, vec in zip(unique, vectors):
                self._check_dim(vec)
                self.cache.put(self._identity_digest, text_digest(text), vec)
                for i in missing[text]:
                    out[i] = vec
        result = [v for v in out if v is not None]
        for vec in result:
            self._check_dim(vec)
        return result

    def embed_one(self, text: str) -> EmbeddingVector:
        return self.embed([text])[0]

    def similarity(self, text_a: str, text_b: str) -> float:
        vec_a, vec_b = self.embed([text_a, text_b])
        return cosine(vec_a, vec_b)

    def top_k_similar_relations(
        self, query_text: str, vocab: list[str], k: int
    ) -> list[tuple[str, float]]:
        """The k vocabulary labels most cosine-similar to the query.

        Descending score, ties broken lexicographically by label. Asking
        for more than the vocabulary holds returns the whole ranking.
        """
        if not vocab:
            raise ContractError("vocabulary must be non-empty")
        if k < 1:
            raise ContractError(f"k must be positive, got {k}")
        vectors = self.embed([query_text] + list(vocab))
        query_vec = vectors[0]
        scored = [(label, cosine(query_vec, vec)) for label, vec in zip(vocab, vectors[1:])]
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        return scored[: min(k, len(vocab))]
