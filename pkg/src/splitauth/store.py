"""Per-node share storage: one share per username, backed by an append-only JSON-lines file.

Record formats, one per line::

    {"username":"Alex","index":1,"total":2,"mode":"segment","payload":"9514..."}
    {"op":"del","username":"Alex"}

Replaying the file in order rebuilds the map; the last record for a username
wins.  A torn final line (crash mid-append) is ignored on recovery.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from pathlib import Path
from typing import Optional, Union

from .core import DigestShare, SplitMode

log = logging.getLogger(__name__)


class StorageError(OSError):
    pass


def _share_record(username: str, share: DigestShare) -> dict:
    return {
        "username": username,
        "index": share.index,
        "total": share.total,
        "mode": share.mode.value,
        "payload": share.payload.hex(),
    }


class ShareStore:
    """Map of username to :class:`DigestShare`.

    With ``path=None`` the store lives only in memory (used by the simulator).
    Writes are serialized by an internal lock and flushed with ``fsync``
    before :meth:`put` or :meth:`delete` return.
    """

    def __init__(self, path: Union[str, os.PathLike, None] = None, fsync: bool = True):
        self.path = Path(path) if path is not None else None
        self.fsync = fsync
        self._shares: dict[str, DigestShare] = {}
        self._lock = threading.Lock()
        self._fh = None
        if self.path is not None:
            self._recover()
            self._fh = open(self.path, "a", encoding="utf-8")

    def _recover(self) -> None:
        if not self.path.exists():
            return
        with open(self.path, encoding="utf-8") as fh:
            lines = fh.read().split("\n")
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if rec.get("op") == "del":
                    self._shares.pop(rec["username"], None)
                else:
                    self._shares[rec["username"]] = DigestShare(
                        rec["index"], rec["total"], SplitMode(rec["mode"]), bytes.fromhex(rec["payload"])
                    )
            except (ValueError, KeyError, TypeError, AttributeError):
                if lineno == len(lines):
                    log.warning("ignoring torn trailing record in %s", self.path)
                    continue
                raise StorageError(f"corrupt record at {self.path}:{lineno}") from None

    def _append(self, record: dict) -> None:
        if self._fh is None:
            return
        try:
            self._fh.write(json.dumps(record, separators=(",", ":")) + "\n")
            self._fh.flush()
            if self.fsync:
                os.fsync(self._fh.fileno())
        except OSError as exc:
            raise StorageError(f"cannot append to {self.path}: {exc}") from exc

    def get(self, username: str) -> Optional[DigestShare]:
        with self._lock:
            return self._shares.get(username)

    def put(self, username: str, share: DigestShare) -> bool:
        """Store ``share``; False if a different share already exists for ``username``.

        Re-putting an identical share is an idempotent success.
        """
        with self._lock:
            existing = self._shares.get(username)
            if existing is not None:
                return existing == share
            self._append(_share_record(username, share))
            self._shares[username] = share
            return True

    def delete(self, username: str) -> None:
        with self._lock:
            if username in self._shares:
                self._append({"op": "del", "username": username})
                del self._shares[username]

    def usernames(self) -> list[str]:
        with self._lock:
            return sorted(self._shares)

    def snapshot(self) -> dict[str, DigestShare]:
        with self._lock:
            return dict(self._shares)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __len__(self):
        return len(self._shares)
