"""Pluggable persistence: a JSON document store and a blob store.

The document store mirrors a hosted document database and enforces its
1 MB per-document cap; anything bigger (trained models, report series,
training frames) belongs in the blob store. Filesystem-backed defaults
are provided along with in-memory variants for tests.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

MAX_DOCUMENT_BYTES = 1_048_576

_SAFE_ID = re.compile(r"[^A-Za-z0-9._:-]")


class DocumentTooLarge(ValueError):
    pass


class DocumentStore:
    """Interface: JSON documents grouped into collections."""

    def put(self, collection: str, doc_id: str, doc: dict) -> None:
        raise NotImplementedError

    def get(self, collection: str, doc_id: str) -> dict | None:
        raise NotImplementedError

    def delete(self, collection: str, doc_id: str) -> None:
        raise NotImplementedError

    def ids(self, collection: str) -> list[str]:
        raise NotImplementedError

    def all(self, collection: str) -> list[dict]:
        return [d for d in (self.get(collection, i) for i in self.ids(collection)) if d]

    @staticmethod
    def encode(doc: dict) -> bytes:
        raw = json.dumps(doc, sort_keys=True).encode("utf-8")
        if len(raw) > MAX_DOCUMENT_BYTES:
            raise DocumentTooLarge(
                f"document is {len(raw)} bytes; limit is {MAX_DOCUMENT_BYTES}"
            )
        return raw


class MemoryDocumentStore(DocumentStore):
    def __init__(self) -> None:
        self._data: dict[str, dict[str, bytes]] = {}

    def put(self, collection: str, doc_id: str, doc: dict) -> None:
        self._data.setdefault(collection, {})[doc_id] = self.encode(doc)

    def get(self, collection: str, doc_id: str) -> dict | None:
        raw = self._data.get(collection, {}).get(doc_id)
        return json.loads(raw) if raw is not None else None

    def delete(self, collection: str, doc_id: str) -> None:
        self._data.get(collection, {}).pop(doc_id, None)

    def ids(self, collection: str) -> list[str]:
        return sorted(self._data.get(collection, {}))


class FsDocumentStore(DocumentStore):
    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, collection: str, doc_id: str) -> Path:
        return self.root / _SAFE_ID.sub("_", collection) / (_SAFE_ID.sub("_", doc_id) + ".json")

    def put(self, collection: str, doc_id: str, doc: dict) -> None:
        raw = self.encode(doc)
        path = self._path(collection, doc_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_bytes(raw)
        tmp.replace(path)

    def get(self, collection: str, doc_id: str) -> dict | None:
        path = self._path(collection, doc_id)
        if not path.exists():
            return None
        return json.loads(path.read_bytes())

    def delete(self, collection: str, doc_id: str) -> None:
        path = self._path(collection, doc_id)
        if path.exists():
            path.unlink()

    def ids(self, collection: str) -> list[str]:
        cdir = self.root / _SAFE_ID.sub("_", collection)
        if not cdir.exists():
            return []
        return sorted(p.stem for p in cdir.glob("*.json"))


class BlobStore:
    """Interface: opaque byte payloads addressed by key."""

    def put_bytes(self, key: str, data: bytes) -> None:
        raise NotImplementedError

    def get_bytes(self, key: str) -> bytes | None:
        raise NotImplementedError

    def keys(self) -> list[str]:
        raise NotImplementedError


class MemoryBlobStore(BlobStore):
    def __init__(self) -> None:
        self._data: dict[str, bytes] = {}

    def put_bytes(self, key: str, data: bytes) -> None:
        self._data[key] = bytes(data)

    def get_bytes(self, key: str) -> bytes | None:
        return self._data.get(key)

    def keys(self) -> list[str]:
        return sorted(self._data)


class FsBlobStore(BlobStore):
    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def put_bytes(self, key: str, data: bytes) -> None:
        path = self.root / _SAFE_ID.sub("_", key)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(data)
        tmp.replace(path)

    def get_bytes(self, key: str) -> bytes | None:
        path = self.root / _SAFE_ID.sub("_", key)
        return path.read_bytes() if path.exists() else None

    def keys(self) -> list[str]:
        return sorted(p.name for p in self.root.iterdir() if p.is_file())
