"""Read-only SQL execution and denotation comparison.

A denotation is the multiset of result rows with cells normalized so that
engine type-affinity artifacts (1 vs 1.0) do not break equality. Numeric
cells are quantized to a 1e-6 grid, text compared byte-exact, NULL equal
only to NULL. Comparison is order-sensitive exactly when the producing
query has a top-level ORDER BY.
"""

from __future__ import annotations

import sqlite3
import time
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .canon import has_top_level_order_by
from .errors import ExecutionError, ExecutionTimeoutError, RejectedStatementError
from .schema import DatabaseEnv

DEFAULT_TIMEOUT = 5.0
_QUANTUM = 10**6  # numeric cells compared on a 1e-6 grid

Cell = tuple


def normalize_cell(value) -> Cell:
    if value is None:
        return ("null",)
    if isinstance(value, bool):
        return ("num", int(value) * _QUANTUM)
    if isinstance(value, int):
        return ("num", value * _QUANTUM)
    if isinstance(value, float):
        return ("num", round(value * _QUANTUM))
    if isinstance(value, bytes):
        return ("blob", value)
    return ("text", str(value))


@dataclass(frozen=True)
class Denotation:
    rows: tuple[tuple[Cell, ...], ...]
    column_count: int
    ordered: bool


def connect_readonly(path: str | Path) -> sqlite3.Connection:
    return sqlite3.connect(f"file:{Path(path)}?mode=ro", uri=True)


def execute(
    sql: str,
    env: DatabaseEnv,
    timeout: float = DEFAULT_TIMEOUT,
    connection: sqlite3.Connection | None = None,
) -> Denotation:
    """Execute a SELECT against the environment's database, read-only.

    Pass ``connection`` to reuse a per-worker connection; otherwise one is
    opened from env.store_path and closed again.
    """
    stripped = sql.strip()
    if not stripped.lower().startswith("select"):
        raise RejectedStatementError(f"only SELECT statements run here: {stripped[:40]!r}")

    own = connection is None
    if own:
        if env.store_path is None or not Path(env.store_path).exists():
            raise ExecutionError(f"{env.db_id}: no database file at {env.store_path}")
        conn = connect_readonly(env.store_path)
    else:
        conn = connection

    started = time.monotonic()

    def guard():
        if time.monotonic() - started > timeout:
            return 1
        return 0

    conn.set_progress_handler(guard, 2000)
    try:
        cursor = conn.execute(stripped)
        raw_rows = cursor.fetchall()
        column_count = len(cursor.description) if cursor.description else 0
    except sqlite3.OperationalError as exc:
        if "interrupted" in str(exc).lower():
            raise ExecutionTimeoutError(f"query exceeded {timeout}s budget") from exc
        raise ExecutionError(str(exc)) from exc
    except sqlite3.Error as exc:
        raise ExecutionError(str(exc)) from exc
    finally:
        conn.set_progress_handler(None, 0)
        if own:
            conn.close()

    rows = tuple(tuple(normalize_cell(v) for v in row) for row in raw_rows)
    return Denotation(rows=rows, column_count=column_count, ordered=has_top_level_order_by(stripped))


def denotations_equal(a: Denotation, b: Denotation, semantics: str = "bag") -> bool:
    """Row equality: sequences when either side is ordered, multisets (or
    sets under semantics="set") otherwise."""
    if a.column_count != b.column_count:
        return False
    if a.ordered or b.ordered:
        return a.rows == b.rows
    if semantics == "set":
        return set(a.rows) == set(b.rows)
    return Counter(a.rows) == Counter(b.rows)
