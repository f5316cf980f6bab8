"""HTTP clients for the embedder and dependency-classifier endpoints.

Anything with the same method names works wherever these clients are
accepted; tests pass plain in-process stubs.
"""

from __future__ import annotations

import logging
import time

import httpx

from .errors import RemoteError

logger = logging.getLogger(__name__)

DEFAULT_ATTEMPTS = 3
DEFAULT_BACKOFF = 0.5


class _JsonClient:
    def __init__(self, base_url, timeout=30.0, attempts=DEFAULT_ATTEMPTS,
                 backoff=DEFAULT_BACKOFF, transport=None):
        if attempts < 1:
            raise ValueError("attempts must be >= 1")
        self.base_url = str(base_url).rstrip("/")
        self.timeout = timeout
        self.attempts = attempts
        self.backoff = backoff
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def close(self):
        self._client.close()

    def __deepcopy__(self, memo):
        # shared connection pool; sklearn.clone must not duplicate it
        return self

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _post(self, path, payload) -> dict:
        url = self.base_url + path
        for attempt in range(1, self.attempts + 1):
            try:
                response = self._client.post(url, json=payload)
                if response.status_code >= 500:
                    raise httpx.HTTPStatusError(
                        f"server error {response.status_code}",
                        request=response.request, response=response)
                break
            except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                if attempt == self.attempts:
                    raise RemoteError(f"POST {url} failed after {attempt} attempts: {exc}") from exc
                delay = self.backoff * 2 ** (attempt - 1)
                logger.warning("POST %s failed (%s); retrying in %.2fs", url, exc, delay)
                time.sleep(delay)
        if response.status_code >= 400:
            raise RemoteError(f"POST {url} returned {response.status_code}: {response.text[:200]}")
        try:
            body = response.json()
        except ValueError:
            raise RemoteError(f"POST {url} returned non-JSON body") from None
        if not isinstance(body, dict):
            raise RemoteError(f"POST {url} returned {type(body).__name__}, expected object")
        return body


class HttpEmbedder(_JsonClient):
    """Client for ``POST /v1/embed``."""

    def embed(self, texts: list[str]) -> list[list[float]]:
        if not texts:
            return []
        body = self._post("/v1/embed", {"texts": list(texts)})
        vectors = body.get("embeddings")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise RemoteError(
                f"embedder returned {len(vectors) if isinstance(vectors, list) else 'no'} "
                f"vectors for {len(texts)} texts")
        return vectors


class HttpClassifier(_JsonClient):
    """Client for ``POST /v1/classify_dependency``.

    Returns the raw ``(label, confidence)`` pair; validation happens in
    :func:`toolgraph.depgraph.classify_pair`.
    """

    def classify(self, tool_a: dict, tool_b: dict):
        body = self._post("/v1/classify_dependency", {"tool_a": tool_a, "tool_b": tool_b})
        if "label" not in body or "confidence" not in body:
            raise RemoteError(f"classifier response lacks label/confidence: {body!r}")
        return body["label"], body["confidence"]
