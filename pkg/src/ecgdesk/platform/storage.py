"""Content-addressed object store and the embedded relational store.

Objects live under ``objects/ab/<sha256>`` keyed by their own digest, so a
stored blob can never change under its address. The relational side is a
single sqlite file; all writes go through one lock, which also makes the
audit sequence gap-free.
"""
from __future__ import annotations

import hashlib
import sqlite3
import threading
from pathlib import Path

_SCHEMA = """
CREATE TABLE IF NOT EXISTS users (
    id TEXT PRIMARY KEY,
    org TEXT NOT NULL,
    role TEXT NOT NULL,
    token_hash TEXT UNIQUE NOT NULL,
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS recordings (
    id TEXT PRIMARY KEY,
    org TEXT NOT NULL,
    patient_ref TEXT NOT NULL,
    format TEXT NOT NULL,
    object_addr TEXT NOT NULL,
    uploaded_by TEXT NOT NULL,
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS cases (
    id TEXT PRIMARY KEY,
    org TEXT NOT NULL,
    patient_ref TEXT NOT NULL,
    recording_ref TEXT NOT NULL,
    requesting_clinician TEXT NOT NULL,
    status TEXT NOT NULL,
    retry_count INTEGER NOT NULL DEFAULT 0,
    error TEXT,
    result_addr TEXT,
    report_addr TEXT,
    lead TEXT NOT NULL DEFAULT 'II',
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS result_versions (
    case_id TEXT NOT NULL,
    version INTEGER NOT NULL,
    object_addr TEXT NOT NULL,
    created_at TEXT NOT NULL,
    PRIMARY KEY (case_id, version)
);
CREATE TABLE IF NOT EXISTS edits (
    id TEXT PRIMARY KEY,
    case_id TEXT NOT NULL,
    target TEXT NOT NULL,
    action TEXT NOT NULL,
    new_value TEXT,
    original_value TEXT,
    editor TEXT NOT NULL,
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS audit (
    seq INTEGER PRIMARY KEY,
    actor TEXT NOT NULL,
    role TEXT NOT NULL,
    action TEXT NOT NULL,
    target TEXT NOT NULL,
    category TEXT NOT NULL,
    created_at TEXT NOT NULL,
    details TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS billing_ledger (
    entry_id INTEGER PRIMARY KEY AUTOINCREMENT,
    org TEXT NOT NULL,
    case_id TEXT NOT NULL,
    amount REAL NOT NULL,
    created_at TEXT NOT NULL
);
"""


class ObjectStore:
    """Immutable blobs addressed by sha256."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def put(self, data: bytes) -> str:
        addr = hashlib.sha256(data).hexdigest()
        path = self.root / addr[:2] / addr
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_bytes(data)
            tmp.rename(path)
        return addr

    def get(self, addr: str) -> bytes:
        path = self.root / addr[:2] / addr
        if not path.exists():
            raise KeyError(f"unknown object: {addr}")
        return path.read_bytes()

    def exists(self, addr: str) -> bool:
        return (self.root / addr[:2] / addr).exists()


class Database:
    """sqlite wrapper with serialized writes and a gap-free audit sequence."""

    def __init__(self, path: str | Path):
        self.path = str(path)
        self._lock = threading.RLock()
        self._conn = sqlite3.connect(self.path, check_same_thread=False)
        self._conn.row_factory = sqlite3.Row
        self._conn.execute("PRAGMA journal_mode=WAL")
        self._conn.execute("PRAGMA foreign_keys=ON")
        with self._lock:
            self._conn.executescript(_SCHEMA)
            self._conn.commit()

    def write(self, fn):
        """Run fn(conn) inside one serialized transaction."""
        with self._lock:
            try:
                result = fn(self._conn)
                self._conn.commit()
                return result
            except Exception:
                self._conn.rollback()
                raise

    def read(self, sql: str, args: tuple = ()) -> list[sqlite3.Row]:
        with self._lock:
            return self._conn.execute(sql, args).fetchall()

    def read_one(self, sql: str, args: tuple = ()) -> sqlite3.Row | None:
        rows = self.read(sql, args)
        return rows[0] if rows else None

    def next_audit_seq(self, conn: sqlite3.Connection) -> int:
        row = conn.execute("SELECT COALESCE(MAX(seq), 0) + 1 AS nxt FROM audit").fetchone()
        return int(row["nxt"])

    def close(self) -> None:
        with self._lock:
            self._conn.close()
