"""
database.py — Async SQLite run registry for pathrec.

Tables:
  stage_log  — one row per pipeline stage invocation (calling | done | error)
  artifacts  — every file a stage wrote, with format version, hash and config
"""

from __future__ import annotations

import hashlib
import json
import logging
from contextlib import asynccontextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, AsyncGenerator

import aiosqlite

logger = logging.getLogger(__name__)

# ── Schema ────────────────────────────────────────────────────────────────────

_DDL = """
PRAGMA journal_mode = WAL;

CREATE TABLE IF NOT EXISTS stage_log (
    id             INTEGER PRIMARY KEY AUTOINCREMENT,
    stage          TEXT NOT NULL,
    status         TEXT NOT NULL DEFAULT 'calling',  -- calling | done | error
    duration_ms    INTEGER,
    result_summary TEXT,
    config_json    TEXT,
    called_at      TEXT NOT NULL
);

CREATE TABLE IF NOT EXISTS artifacts (
    path           TEXT PRIMARY KEY,
    stage          TEXT NOT NULL,
    format_version INTEGER NOT NULL,
    sha256         TEXT NOT NULL,
    config_json    TEXT,
    written_at     TEXT NOT NULL
);

CREATE INDEX IF NOT EXISTS idx_stage_log_called_at ON stage_log(called_at DESC);
CREATE INDEX IF NOT EXISTS idx_artifacts_stage     ON artifacts(stage);
"""

# ── Connection helper ─────────────────────────────────────────────────────────

_db_path: str | None = None


def set_db_path(path: str | Path) -> None:
    global _db_path
    _db_path = str(path)


def _get_db_path() -> str:
    global _db_path
    if _db_path is None:
        from config import load_settings

        _db_path = str(load_settings().database_path)
    return _db_path


@asynccontextmanager
async def get_db() -> AsyncGenerator[aiosqlite.Connection, None]:
    """Yield an open, row-factory-enabled DB connection."""
    async with aiosqlite.connect(_get_db_path()) as conn:
        conn.row_factory = aiosqlite.Row
        yield conn


# ── Initialisation ────────────────────────────────────────────────────────────

async def init_db() -> None:
    """Create all tables if they don't exist yet."""
    Path(_get_db_path()).parent.mkdir(parents=True, exist_ok=True)
    async with get_db() as db:
        await db.executescript(_DDL)
        await db.commit()
    logger.debug("Run registry initialised at %s", _get_db_path())


# ── Stage log ─────────────────────────────────────────────────────────────────

async def log_stage_call(stage: str, config: dict[str, Any] | None = None) -> int:
    """Insert a 'calling' entry and return its auto-generated ID."""
    async with get_db() as db:
        async with db.execute(
            """
            INSERT INTO stage_log (stage, status, config_json, called_at)
            VALUES (?, 'calling', ?, ?)
            """,
            (stage, json.dumps(config, sort_keys=True) if config else None, _utcnow()),
        ) as cur:
            row_id = cur.lastrowid
        await db.commit()
    return row_id  # type: ignore[return-value]


async def finish_stage_call(
    log_id: int,
    duration_ms: int,
    result_summary: str,
    status: str = "done",
) -> None:
    async with get_db() as db:
        await db.execute(
            """
            UPDATE stage_log
            SET status = ?, duration_ms = ?, result_summary = ?
            WHERE id = ?
            """,
            (status, duration_ms, result_summary, log_id),
        )
        await db.commit()


async def get_stage_log(limit: int = 30, stage: str | None = None) -> list[dict[str, Any]]:
    """Return recent stage log entries, newest first."""
    sql = "SELECT * FROM stage_log"
    params: list[Any] = []
    if stage:
        sql += " WHERE stage = ?"
        params.append(stage)
    sql += " ORDER BY id DESC LIMIT ?"
    params.append(limit)
    async with get_db() as db:
        async with db.execute(sql, params) as cur:
            rows = await cur.fetchall()
    return [dict(row) for row in rows]


# ── Artifacts ─────────────────────────────────────────────────────────────────

def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


async def register_artifact(
    path: str | Path,
    stage: str,
    format_version: int = 1,
    config: dict[str, Any] | None = None,
) -> str:
    """Record (or replace) an artifact entry; returns its content hash."""
    digest = file_sha256(path)
    async with get_db() as db:
        await db.execute(
            """
            INSERT OR REPLACE INTO artifacts
                (path, stage, format_version, sha256, config_json, written_at)
            VALUES (?,?,?,?,?,?)
            """,
            (
                str(Path(path).resolve()), stage, format_version, digest,
                json.dumps(config, sort_keys=True) if config else None, _utcnow(),
            ),
        )
        await db.commit()
    return digest


async def get_artifact(path: str | Path) -> dict[str, Any] | None:
    async with get_db() as db:
        async with db.execute(
            "SELECT * FROM artifacts WHERE path = ?", (str(Path(path).resolve()),)
        ) as cur:
            row = await cur.fetchone()
    return dict(row) if row else None


async def list_artifacts(stage: str | None = None) -> list[dict[str, Any]]:
    sql = "SELECT * FROM artifacts"
    params: tuple[Any, ...] = ()
    if stage:
        sql += " WHERE stage = ?"
        params = (stage,)
    async with get_db() as db:
        async with db.execute(sql + " ORDER BY written_at, path", params) as cur:
            rows = await cur.fetchall()
    return [dict(row) for row in rows]


# ── Utilities ─────────────────────────────────────────────────────────────────

def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


async def clear_registry(stage: str | None = None) -> int:
    """Delete artifact entries for one or all stages. Returns deleted count."""
    async with get_db() as db:
        if stage:
            async with db.execute(
                "SELECT COUNT(*) FROM artifacts WHERE stage = ?", (stage,)
            ) as cur:
                row = await cur.fetchone()
                count = row[0] if row else 0
            await db.execute("DELETE FROM artifacts WHERE stage = ?", (stage,))
        else:
            async with db.execute("SELECT COUNT(*) FROM artifacts") as cur:
                row = await cur.fetchone()
                count = row[0] if row else 0
            await db.execute("DELETE FROM artifacts")
            await db.execute("DELETE FROM stage_log")
        await db.commit()
    return count
