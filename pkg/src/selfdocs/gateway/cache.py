"""Content-addressed, append-only response cache."""

from __future__ import annotations

import json
import os
import tempfile
import threading
from pathlib import Path
from typing import Any


class ResponseCache:
    """Maps digest -> JSON record.  Entries are written once and never replaced.

    On disk the layout is ``<root>/<digest[:2]>/<digest>.json``.  With
    ``root=None`` the cache lives in memory only.
    """

    def __init__(self, root: str | os.PathLike | None = None):
        self.root = Path(root) if root is not None else None
        self._mem: dict[str, dict[str, Any]] = {}
        self._lock = threading.Lock()

    def _path(self, digest: str) -> Path:
        return self.root / digest[:2] / f"{digest}.json"

    def get(self, digest: str) -> dict[str, Any] | None:
        if self.root is None:
            with self._lock:
                return self._mem.get(digest)
        try:
            return json.loads(self._path(digest).read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None

    def __contains__(self, digest: str) -> bool:
        return self.get(digest) is not None

    def put(self, digest: str, record: dict[str, Any]) -> bool:
        """Store ``record``; returns False (and keeps the old entry) if already present."""
        if self.root is None:
            with self._lock:
                if digest in self._mem:
                    return False
                self._mem[digest] = record
                return True
        path = self._path(digest)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                json.dump(record, f, ensure_ascii=False, sort_keys=True)
            # link() refuses to overwrite, which gives write-once semantics across processes
            os.link(tmp, path)
            return True
        except FileExistsError:
            return False
        finally:
            os.unlink(tmp)

    def __len__(self) -> int:
        if self.root is None:
            return len(self._mem)
        if not self.root.exists():
            return 0
        return sum(1 for _ in self.root.glob("*/*.json"))
