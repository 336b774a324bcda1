"""Text-to-vector encoders and cosine similarity.

Encoders map UTF-8 text to fixed-dimension unit vectors (the zero vector for
empty or whitespace-only text). The default encoder is a hashed character
n-gram term-frequency model: deterministic, dependency-free, and good enough
for small-domain experiments. A remote encoder speaks a minimal JSON protocol
for swapping in a real embedding service.
"""

from __future__ import annotations

import hashlib
import threading
from typing import Protocol, runtime_checkable

import numpy as np

__all__ = [
    "TextEncoder",
    "HashedNGramEncoder",
    "RemoteEncoder",
    "EncodingError",
    "cosine",
]


class EncodingError(RuntimeError):
    """Raised when an encoder cannot produce a vector (e.g. transport failure)."""


@runtime_checkable
class TextEncoder(Protocol):
    """Deterministic text -> unit vector mapping of fixed dimension ``dim``."""

    dim: int

    def encode(self, text: str) -> np.ndarray: ...


def _freeze(vec: np.ndarray) -> np.ndarray:
    vec.flags.writeable = False
    return vec


class HashedNGramEncoder:
    """Case-folded character n-gram counts hashed into ``dim`` buckets.

    Identical text always yields the identical vector, across processes, as
    long as ``seed`` matches: bucket assignment uses a keyed blake2b digest,
    not Python's per-process salted ``hash``.
    """

    def __init__(self, dim: int = 256, ngram_range: tuple[int, int] = (3, 5), seed: int = 0):
        if dim <= 0:
            raise ValueError(f"dim must be positive, got {dim}")
        lo, hi = ngram_range
        if lo < 1 or hi < lo:
            raise ValueError(f"invalid ngram_range {ngram_range}")
        self.dim = dim
        self.ngram_range = (lo, hi)
        self.seed = seed
        self._key = seed.to_bytes(8, "little", signed=True)
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def _bucket(self, gram: str) -> int:
        digest = hashlib.blake2b(gram.encode("utf-8"), key=self._key, digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dim

    def encode(self, text: str) -> np.ndarray:
        with self._lock:
            cached = self._cache.get(text)
        if cached is not None:
            return cached
        folded = text.casefold().strip()
        vec = np.zeros(self.dim, dtype=np.float64)
        if folded:
            lo, hi = self.ngram_range
            for n in range(lo, hi + 1):
                for i in range(len(folded) - n + 1):
                    vec[self._bucket(folded[i : i + n])] += 1.0
            # very short texts have no n-grams at all; fall back to whole string
            if not vec.any():
                vec[self._bucket(folded)] = 1.0
            vec /= np.linalg.norm(vec)
        vec = _freeze(vec)
        with self._lock:
            self._cache[text] = vec
        return vec


class RemoteEncoder:
    """Encoder backed by an HTTP embedding endpoint.

    Protocol: ``POST endpoint`` with body ``{"texts": [...]}`` returning
    ``{"vectors": [[...], ...]}``. Responses are L2-normalized locally and
    cached by exact text. Transport errors are retried with backoff before
    surfacing as :class:`EncodingError`.
    """

    def __init__(
        self,
        endpoint: str,
        dim: int = 256,
        timeout: float = 10.0,
        batch_size: int = 32,
        max_retries: int = 3,
    ):
        self.endpoint = endpoint
        self.dim = dim
        self.timeout = timeout
        self.batch_size = batch_size
        self.max_retries = max_retries
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def _post(self, texts: list[str]) -> list[list[float]]:
        import requests

        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                resp = requests.post(self.endpoint, json={"texts": texts}, timeout=self.timeout)
                resp.raise_for_status()
                return resp.json()["vectors"]
            except Exception as exc:  # noqa: BLE001 - retried, then re-raised
                last_error = exc
                if attempt + 1 < self.max_retries:
                    import time

                    time.sleep(0.2 * 2**attempt)
        raise EncodingError(
            f"embedding endpoint {self.endpoint} failed after {self.max_retries} attempts: {last_error}"
        )

    def encode(self, text: str) -> np.ndarray:
        return self.encode_batch([text])[0]

    def encode_batch(self, texts: list[str]) -> list[np.ndarray]:
        with self._lock:
            missing = [t for t in dict.fromkeys(texts) if t not in self._cache and t.strip()]
        for start in range(0, len(missing), self.batch_size):
            chunk = missing[start : start + self.batch_size]
            vectors = self._post(chunk)
            if len(vectors) != len(chunk):
                raise EncodingError(
                    f"endpoint returned {len(vectors)} vectors for {len(chunk)} texts"
                )
            with self._lock:
                for t, raw in zip(chunk, vectors):
                    vec = np.asarray(raw, dtype=np.float64)
                    if vec.shape != (self.dim,):
                        raise EncodingError(f"expected dimension {self.dim}, got {vec.shape}")
                    norm = np.linalg.norm(vec)
                    if norm > 0:
                        vec = vec / norm
                    self._cache[t] = _freeze(vec)
        zero = _freeze(np.zeros(self.dim, dtype=np.float64))
        with self._lock:
            return [self._cache[t] if t.strip() else zero for t in texts]


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two vectors; 0.0 if either has zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a / na, b / nb))
