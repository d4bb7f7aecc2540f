"""
Spent-token stores shared by gateway instances.

``add`` is an atomic test-and-set: it returns True exactly once per key
across every caller sharing the store, and False on every later attempt.
Backend failures surface as StoreUnavailableError, never as a silent accept.
"""

from __future__ import annotations

import sqlite3
import threading
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Iterator, NamedTuple

from .errors import StoreUnavailableError


class SpentKey(NamedTuple):
    period_id: str
    slice_index: int
    digest: bytes  # sha256 of the 64-byte token message


class SpentTokenStore(ABC):
    @abstractmethod
    def add(self, key: SpentKey) -> bool:
        """Insert ``key``; True if it was new, False if already spent."""

    @abstractmethod
    def __contains__(self, key: SpentKey) -> bool: ...

    @abstractmethod
    def __len__(self) -> int: ...

    @abstractmethod
    def keys(self) -> Iterator[SpentKey]: ...

    def close(self) -> None:
        pass


class MemorySpentStore(SpentTokenStore):
    """In-process store; share one instance between gateways in the same process."""

    def __init__(self):
        self._keys: set[SpentKey] = set()
        self._lock = threading.Lock()
        self.available = True

    def add(self, key: SpentKey) -> bool:
        with self._lock:
            if not self.available:
                raise StoreUnavailableError("spent-token store is unavailable")
            if key in self._keys:
                return False
            self._keys.add(key)
            return True

    def __contains__(self, key: SpentKey) -> bool:
        with self._lock:
            return key in self._keys

    def __len__(self) -> int:
        return len(self._keys)

    def keys(self) -> Iterator[SpentKey]:
        with self._lock:
            return iter(sorted(self._keys))


_SCHEMA = """
CREATE TABLE IF NOT EXISTS spent (
    period_id TEXT NOT NULL,
    slice_index INTEGER NOT NULL,
    digest BLOB NOT NULL,
    PRIMARY KEY (period_id, slice_index, digest)
) WITHOUT ROWID
"""


class SqliteSpentStore(SpentTokenStore):
    """File-backed store; several processes may open the same path.

    Uniqueness is enforced by the primary key, so concurrent inserts of one
    key from any number of connections leave exactly one winner.
    """

    def __init__(self, path: str | Path, timeout: float = 30.0):
        self.path = str(path)
        self.timeout = timeout
        self._local = threading.local()
        self._conns: list[sqlite3.Connection] = []
        self._conns_lock = threading.Lock()
        with self._guard():
            conn = self._conn()
            conn.execute("PRAGMA journal_mode=WAL")
            conn.execute(_SCHEMA)

    def _guard(self):
        return _SqliteGuard()

    def _conn(self) -> sqlite3.Connection:
        conn = getattr(self._local, "conn", None)
        if conn is None:
            conn = sqlite3.connect(self.path, timeout=self.timeout, isolation_level=None, check_same_thread=False)
            self._local.conn = conn
            with self._conns_lock:
                self._conns.append(conn)
        return conn

    def add(self, key: SpentKey) -> bool:
        with self._guard():
            cur = self._conn().execute(
                "INSERT OR IGNORE INTO spent (period_id, slice_index, digest) VALUES (?, ?, ?)",
                (key.period_id, int(key.slice_index), bytes(key.digest)),
            )
            return cur.rowcount == 1

    def __contains__(self, key: SpentKey) -> bool:
        with self._guard():
            row = self._conn().execute(
                "SELECT 1 FROM spent WHERE period_id = ? AND slice_index = ? AND digest = ?",
                (key.period_id, int(key.slice_index), bytes(key.digest)),
            ).fetchone()
            return row is not None

    def __len__(self) -> int:
        with self._guard():
            return int(self._conn().execute("SELECT COUNT(*) FROM spent").fetchone()[0])

    def keys(self) -> Iterator[SpentKey]:
        with self._guard():
            rows = self._conn().execute(
                "SELECT period_id, slice_index, digest FROM spent ORDER BY period_id, slice_index, digest"
            ).fetchall()
        return iter(SpentKey(p, int(i), bytes(d)) for p, i, d in rows)

    def close(self) -> None:
        with self._conns_lock:
            for c in self._conns:
                c.close()
            self._conns.clear()
        self._local = threading.local()


class _SqliteGuard:
    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None and issubclass(exc_type, sqlite3.Error):
            raise StoreUnavailableError(f"spent-token store error: {exc}") from exc
        return False
