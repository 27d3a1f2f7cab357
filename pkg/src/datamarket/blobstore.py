"""Content-addressed blob store.

``put`` returns the SHA-256 of the content and keeps one copy per distinct
content.  ``retrieve`` reports a simulated latency that drops as a blob gets
more popular, standing in for the caching behaviour of a P2P store.

With a ``root`` directory, blobs are also written to
``<root>/<first two hex chars>/<64 hex chars>`` and found again on later runs.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from pathlib import Path

from .errors import BlobTooLarge, NotFound
from .ledger import HASH_NAME, content_hash

DEFAULT_MAX_BYTES = 64 * 1024 * 1024
DEFAULT_BASE_LATENCY = 1.0


@dataclass
class Blob:
    content: bytes
    stored_at: int = 0
    access_count: int = 0


@dataclass(frozen=True)
class Retrieval:
    content: bytes
    latency: float
    access_count: int


def handle_of(content: bytes) -> str:
    return content_hash(content).hex()


def retrieval_latency(base_latency: float, previous_accesses: int) -> float:
    return base_latency / (1.0 + math.log2(1.0 + previous_accesses))


def _normalize(handle: str | bytes) -> str:
    if isinstance(handle, (bytes, bytearray)):
        return bytes(handle).hex()
    return handle.lower()


class BlobStore:
    hash_name = HASH_NAME

    def __init__(
        self,
        root: str | Path | None = None,
        max_bytes: int = DEFAULT_MAX_BYTES,
        base_latency: float = DEFAULT_BASE_LATENCY,
        clock=None,
    ) -> None:
        self.root = Path(root) if root is not None else None
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
        self.max_bytes = max_bytes
        self.base_latency = base_latency
        self._clock = clock  # callable returning the current block height
        self._blobs: dict[str, Blob] = {}
        self._lock = threading.Lock()

    def _path(self, handle: str) -> Path:
        assert self.root is not None
        return self.root / handle[:2] / handle

    def _height(self) -> int:
        return self._clock() if self._clock is not None else 0

    def put(self, content: bytes) -> str:
        content = bytes(content)
        if len(content) > self.max_bytes:
            raise BlobTooLarge(f"{len(content)} bytes exceeds the {self.max_bytes}-byte limit")
        handle = handle_of(content)
        with self._lock:
            if handle not in self._blobs:
                self._blobs[handle] = Blob(content, self._height())
                if self.root is not None:
                    path = self._path(handle)
                    if not path.exists():
                        path.parent.mkdir(parents=True, exist_ok=True)
                        tmp = path.with_suffix(".tmp")
                        tmp.write_bytes(content)
                        tmp.replace(path)
        return handle

    def _load(self, handle: str) -> Blob | None:
        blob = self._blobs.get(handle)
        if blob is None and self.root is not None and len(handle) == 64:
            path = self._path(handle)
            if path.is_file():
                blob = Blob(path.read_bytes(), self._height())
                self._blobs[handle] = blob
        return blob

    def has(self, handle: str | bytes) -> bool:
        handle = _normalize(handle)
        with self._lock:
            if handle in self._blobs:
                return True
            return self.root is not None and len(handle) == 64 and self._path(handle).is_file()

    def retrieve(self, handle: str | bytes) -> Retrieval:
        handle = _normalize(handle)
        with self._lock:
            blob = self._load(handle)
            if blob is None:
                raise NotFound(handle)
            latency = retrieval_latency(self.base_latency, blob.access_count)
            blob.access_count += 1
            return Retrieval(blob.content, latency, blob.access_count)

    def get(self, handle: str | bytes) -> bytes:
        return self.retrieve(handle).content

    def access_count(self, handle: str | bytes) -> int:
        handle = _normalize(handle)
        with self._lock:
            blob = self._blobs.get(handle)
            return blob.access_count if blob is not None else 0

    def __len__(self) -> int:
        return len(self._blobs)

    def handles(self) -> list[str]:
        with self._lock:
            return sorted(self._blobs)

    def audit(self) -> list[str]:
        """Handles whose stored bytes no longer hash to the handle."""
        with self._lock:
            return [h for h, b in self._blobs.items() if handle_of(b.content) != h]
