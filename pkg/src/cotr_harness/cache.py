"""Content-addressed on-disk cache shared by the LLM gateway and the MT baseline.

One JSON file per key. Writes go to a temporary file in the same directory
and are moved into place with ``os.replace``, so a reader never observes a
half-written entry.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
from pathlib import Path
from typing import Any

log = logging.getLogger(__name__)


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def digest_of(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class DiskCache:
    """Append-only key/value store; ``directory=None`` keeps entries in memory."""

    def __init__(self, directory: str | Path | None, namespace: str):
        self.root = Path(directory) / namespace if directory else None
        self._memory: dict[str, Any] = {}
        self._guard = threading.Lock()
        self._key_locks: dict[str, threading.Lock] = {}

    def lock_for(self, key: str) -> threading.Lock:
        with self._guard:
            return self._key_locks.setdefault(key, threading.Lock())

    def path_for(self, key: str) -> Path | None:
        return self.root / f"{key}.json" if self.root else None

    def get(self, key: str) -> Any | None:
        path = self.path_for(key)
        if path is None:
            return self._memory.get(key)
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None
        except (ValueError, UnicodeDecodeError) as exc:
            # only possible if something outside the harness wrote the file
            log.warning("ignoring unreadable cache entry %s: %s", path, exc)
            return None

    def put(self, key: str, value: Any) -> None:
        path = self.path_for(key)
        if path is None:
            self._memory[key] = value
            return
        atomic_write_text(path, canonical_json(value) + "\n")

    def __contains__(self, key: str) -> bool:
        path = self.path_for(key)
        return key in self._memory if path is None else path.is_file()
