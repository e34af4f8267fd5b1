# ───────────────────────────────────────────────────────────────────────────────
# app/storage.py
from __future__ import annotations

import json
import math
import os
import sqlite3
import threading
import time
from typing import Any, Dict, Iterable, Optional

_DB_DEFAULT = os.getenv("GAN_DB", "runs.db")


def _num(value: Optional[float]) -> Optional[float]:
    """SQLite has no NaN; store non-finite metrics as NULL."""
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


class Storage:
    """Thread-safe SQLite registry of finished training runs and check results."""

    def __init__(self, db_path: str | os.PathLike[str] = _DB_DEFAULT) -> None:
        self.path = str(db_path)
        self._lock = threading.Lock()
        self._conn = sqlite3.connect(self.path, check_same_thread=False)
        self._conn.execute("PRAGMA journal_mode=WAL")
        self._init()

    def _init(self) -> None:
        cur = self._conn.cursor()
        cur.execute("PRAGMA user_version")
        ver = int(cur.fetchone()[0])
        if ver < 1:
            cur.executescript(
                """
                BEGIN;
                CREATE TABLE IF NOT EXISTS runs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    preset TEXT NOT NULL,
                    variant TEXT NOT NULL,     -- 'softmax' | 'baseline'
                    seed INTEGER NOT NULL,
                    config_json TEXT NOT NULL,
                    verdict TEXT NOT NULL,     -- 'converged' | 'collapsed' | 'diverged'
                    coverage INTEGER NOT NULL,
                    n_modes INTEGER NOT NULL,
                    hq_fraction REAL,
                    hist_js REAL,
                    d_loss REAL,
                    g_loss REAL,
                    saturated_at INTEGER,
                    finished_ts INTEGER NOT NULL,
                    UNIQUE(preset, variant, seed, config_json)
                );
                CREATE INDEX IF NOT EXISTS idx_runs_preset ON runs(preset);
                PRAGMA user_version = 1;
                COMMIT;
                """
            )
            self._conn.commit()

        # Migrate to version 2: theory / gradient check results
        if ver < 2:
            cur.executescript(
                """
                BEGIN;
                CREATE TABLE IF NOT EXISTS checks (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    suite TEXT NOT NULL,       -- 'theory' | 'gradient'
                    name TEXT NOT NULL,
                    value REAL,
                    tolerance REAL NOT NULL,
                    passed INTEGER NOT NULL,
                    ts INTEGER NOT NULL
                );
                CREATE INDEX IF NOT EXISTS idx_checks_suite ON checks(suite);
                PRAGMA user_version = 2;
                COMMIT;
                """
            )
            self._conn.commit()

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    # ── Runs ──────────────────────────────────────────────────────────────────
    def record_run(
        self,
        *,
        preset: str,
        variant: str,
        seed: int,
        config: Dict[str, Any],
        verdict: str,
        coverage: int,
        n_modes: int,
        hq_fraction: Optional[float],
        hist_js: Optional[float],
        d_loss: Optional[float],
        g_loss: Optional[float],
        saturated_at: Optional[int],
        finished_ts: Optional[int] = None,
    ) -> int:
        """Save a finished run. Re-running the same config replaces the row."""
        config_json = json.dumps(config, sort_keys=True, separators=(",", ":"))
        with self._lock:
            cur = self._conn.execute(
                """
                INSERT INTO runs(
                    preset, variant, seed, config_json, verdict, coverage, n_modes,
                    hq_fraction, hist_js, d_loss, g_loss, saturated_at, finished_ts
                )
                VALUES(?,?,?,?,?,?,?,?,?,?,?,?,?)
                ON CONFLICT(preset, variant, seed, config_json) DO UPDATE SET
                    verdict=excluded.verdict,
                    coverage=excluded.coverage,
                    n_modes=excluded.n_modes,
                    hq_fraction=excluded.hq_fraction,
                    hist_js=excluded.hist_js,
                    d_loss=excluded.d_loss,
                    g_loss=excluded.g_loss,
                    saturated_at=excluded.saturated_at,
                    finished_ts=excluded.finished_ts
                """,
                (
                    preset,
                    variant,
                    int(seed),
                    config_json,
                    verdict,
                    int(coverage),
                    int(n_modes),
                    _num(hq_fraction),
                    _num(hist_js),
                    _num(d_loss),
                    _num(g_loss),
                    None if saturated_at is None else int(saturated_at),
                    int(finished_ts if finished_ts is not None else time.time()),
                ),
            )
            self._conn.commit()
            return cur.lastrowid

    def list_runs(self, preset: str | None = None, variant: str | None = None, limit: int = 1000) -> list[dict]:
        """Runs ordered by (preset, variant, seed), oldest first within a key."""
        sql = [
            """
            SELECT id, preset, variant, seed, config_json, verdict, coverage, n_modes,
                   hq_fraction, hist_js, d_loss, g_loss, saturated_at, finished_ts
            FROM runs
            WHERE 1=1
            """
        ]
        args: list[Any] = []
        if preset:
            sql.append("AND preset = ?")
            args.append(preset)
        if variant:
            sql.append("AND variant = ?")
            args.append(variant)
        sql.append("ORDER BY preset, variant, seed, finished_ts, id LIMIT ?")
        args.append(int(limit))

        with self._lock:
            rows = self._conn.execute(" ".join(sql), args).fetchall()

        return [
            {
                "id": int(r[0]),
                "preset": r[1],
                "variant": r[2],
                "seed": int(r[3]),
                "config": json.loads(r[4]),
                "verdict": r[5],
                "coverage": int(r[6]),
                "n_modes": int(r[7]),
                "hq_fraction": r[8],
                "hist_js": r[9],
                "d_loss": r[10],
                "g_loss": r[11],
                "saturated_at": r[12],
                "finished_ts": int(r[13]),
            }
            for r in rows
        ]

    # ── Checks ────────────────────────────────────────────────────────────────
    def record_checks(self, suite: str, results: Iterable[Dict[str, Any]], ts: Optional[int] = None) -> int:
        """Append one row per {name, value, tolerance, pass} result."""
        ts = int(ts if ts is not None else time.time())
        rows = [
            (suite, r["name"], _num(r["value"]), float(r["tolerance"]), int(bool(r["pass"])), ts)
            for r in results
        ]
        with self._lock:
            self._conn.executemany(
                "INSERT INTO checks(suite, name, value, tolerance, passed, ts) VALUES(?,?,?,?,?,?)",
                rows,
            )
            self._conn.commit()
        return len(rows)

    def list_checks(self, suite: str | None = None) -> list[dict]:
        sql = "SELECT suite, name, value, tolerance, passed, ts FROM checks"
        args: tuple = ()
        if suite:
            sql += " WHERE suite = ?"
            args = (suite,)
        sql += " ORDER BY id"
        with self._lock:
            rows = self._conn.execute(sql, args).fetchall()
        return [
            {"suite": r[0], "name": r[1], "value": r[2], "tolerance": r[3], "pass": bool(r[4]), "ts": int(r[5])}
            for r in rows
        ]


store = Storage(_DB_DEFAULT)  # simple singleton
