"""Fuzz-test execution: regenerate database content at random, then require
denotation equality between gold and prediction on every instance.

Content generation preserves the schema exactly and enforces the schema's
constraints by construction: primary key columns get distinct values,
foreign key cells are drawn from the referenced column's generated values
(parents are materialized before their children), and composite primary
keys are deduplicated before dependents sample from them. Pools repeat
values on purpose so equality predicates stay satisfiable and instances
remain discriminative.
"""

from __future__ import annotations

import os
import shutil
import sqlite3
import tempfile
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from random import Random

from .errors import ExecutionError, GenerationError
from .execution import denotations_equal, execute
from .schema import ColumnRef, DatabaseEnv
from .workers import derive_rng

_SQL_TYPE = {"number": "NUMERIC", "text": "TEXT", "time": "TEXT", "boolean": "INTEGER", "other": "TEXT"}


@dataclass(frozen=True)
class FuzzConfig:
    instances: int = 10
    min_rows: int = 5
    max_rows: int = 50
    seed: int = 0
    scratch: Path | None = None
    number_low: int = 0
    number_high: int = 100
    decimal_rate: float = 0.10
    text_pool_size: int = 12
    year_low: int = 2000
    year_high: int = 2020

    def __post_init__(self):
        if self.instances < 1:
            raise ValueError("instances must be >= 1")
        if not (1 <= self.min_rows <= self.max_rows):
            raise ValueError("row range must be nonempty and positive")

    def scratch_dir(self) -> Path:
        if self.scratch is not None:
            return Path(self.scratch)
        return Path(tempfile.gettempdir()) / "sqlsynth-fuzz"


@dataclass(frozen=True)
class FuzzOutcome:
    match: bool
    per_instance: tuple[bool, ...]
    fragile: tuple[int, ...]  # instance indices where gold itself errored


def _text_pool(env: DatabaseEnv, rng: Random, size: int) -> list[str]:
    """Schema-derived tokens plus random short strings, repeats guaranteed
    by the small pool size."""
    pool: list[str] = []
    for table in env.tables:
        pool.append(table.name.lower())
        for col in table.columns:
            if col.logical_type == "text":
                pool.append(col.name.lower().replace("_", " "))
    letters = "abcdefghijklmnopqrstuvwxyz"
    while len(pool) < size:
        pool.append("".join(rng.choice(letters) for _ in range(rng.randint(3, 6))))
    return pool[:size]


def _regular_value(col: ColumnRef, rng: Random, cfg: FuzzConfig, text_pool: list[str]):
    if col.logical_type == "number":
        if rng.random() < cfg.decimal_rate:
            return round(rng.uniform(cfg.number_low, cfg.number_high), 2)
        return rng.randint(cfg.number_low, cfg.number_high)
    if col.logical_type == "time":
        year = rng.randint(cfg.year_low, cfg.year_high)
        return f"{year:04d}-{rng.randint(1, 12):02d}-{rng.randint(1, 28):02d}"
    if col.logical_type == "boolean":
        return rng.randint(0, 1)
    return rng.choice(text_pool)


def _distinct_values(col: ColumnRef, n: int, rng: Random, cfg: FuzzConfig):
    if col.logical_type in ("number", "boolean"):
        pool = rng.sample(range(1, max(4 * n, 50)), n)
        return list(pool)
    if col.logical_type == "time":
        days = rng.sample(range(0, max(4 * n, 400)), n)
        base_year = cfg.year_low
        return [
            f"{base_year + d // 336:04d}-{(d // 28) % 12 + 1:02d}-{d % 28 + 1:02d}"
            for d in days
        ]
    stems = [f"{col.name.lower()}_{i}" for i in rng.sample(range(max(4 * n, 50)), n)]
    return stems


def _table_topo_order(env: DatabaseEnv) -> list[int]:
    """Parents before children; FK cycles fall back to index order."""
    children: dict[int, set[int]] = {i: set() for i in range(env.table_count)}
    indegree = [0] * env.table_count
    for child_col, parent_col in env.foreign_keys:
        c, p = child_col.table_index, parent_col.table_index
        if c == p or c in children[p]:
            continue
        children[p].add(c)
        indegree[c] += 1
    ready = sorted(i for i in range(env.table_count) if indegree[i] == 0)
    order: list[int] = []
    while ready:
        node = ready.pop(0)
        order.append(node)
        for child in sorted(children[node]):
            indegree[child] -= 1
            if indegree[child] == 0:
                ready.append(child)
        ready.sort()
    for i in range(env.table_count):
        if i not in order:
            order.append(i)
    return order


def randomize_db(env: DatabaseEnv, cfg: FuzzConfig, instance_index: int) -> DatabaseEnv:
    """Write one randomized instance of the environment and return an env
    pointing at it. Deterministic per (cfg.seed, instance_index); an already
    generated instance file is reused, so change the seed or the scratch
    directory when changing row ranges or value pools."""
    out_dir = cfg.scratch_dir() / env.db_id
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"fuzz_{cfg.seed}_{instance_index}.sqlite"
    fuzz_env = replace(env, store_path=out_path)
    if out_path.exists():
        return fuzz_env

    rng = derive_rng(cfg.seed, env.db_id, "instance", instance_index)
    text_pool = _text_pool(env, rng, cfg.text_pool_size)

    pk_tables: dict[int, set[int]] = {}
    for pk in env.primary_keys:
        pk_tables.setdefault(pk.table_index, set()).add(pk.column_index)
    fk_of: dict[tuple[int, int], ColumnRef] = {}
    for child, parent in env.foreign_keys:
        fk_of[(child.table_index, child.column_index)] = parent

    row_counts = [rng.randint(cfg.min_rows, cfg.max_rows) for _ in env.tables]
    # A single-column PK that is also an FK cannot exceed its parent pool.
    for _ in range(env.table_count):
        for (t, c), parent in fk_of.items():
            if pk_tables.get(t) == {c}:
                row_counts[t] = min(row_counts[t], row_counts[parent.table_index])

    columns_data: dict[tuple[int, int], list] = {}
    rows_by_table: dict[int, list[list]] = {}

    # Phase A: non-FK columns, PK columns distinct.
    for t, table in enumerate(env.tables):
        n = row_counts[t]
        cols: list[list] = []
        for col in table.columns:
            if (t, col.column_index) in fk_of:
                cols.append([None] * n)
            elif col.column_index in pk_tables.get(t, set()) and len(pk_tables[t]) == 1:
                cols.append(_distinct_values(col, n, rng, cfg))
            else:
                cols.append([_regular_value(col, rng, cfg, text_pool) for _ in range(n)])
        rows_by_table[t] = [list(r) for r in zip(*cols)] if cols else []

    # Phase B: fill FK cells parent-first, dedup composite PKs as we go.
    for t in _table_topo_order(env):
        table = env.tables[t]
        rows = rows_by_table[t]
        for col in table.columns:
            parent = fk_of.get((t, col.column_index))
            if parent is None:
                continue
            parent_rows = rows_by_table[parent.table_index]
            pool = [r[parent.column_index] for r in parent_rows if r[parent.column_index] is not None]
            if not pool:
                raise GenerationError(
                    f"{env.db_id}: FK {table.name}.{col.name} references an empty column"
                )
            distinct_needed = pk_tables.get(t) == {col.column_index}
            if distinct_needed:
                pool = sorted(set(pool), key=lambda v: (str(type(v)), str(v)))
                if len(pool) < len(rows):
                    del rows[len(pool):]
                draws = rng.sample(pool, len(rows))
                for row, value in zip(rows, draws):
                    row[col.column_index] = value
            else:
                for row in rows:
                    row[col.column_index] = rng.choice(pool)
        pk_cols = sorted(pk_tables.get(t, ()))
        if len(pk_cols) > 1:
            seen = set()
            deduped = []
            for row in rows:
                key = tuple(row[c] for c in pk_cols)
                if key not in seen:
                    seen.add(key)
                    deduped.append(row)
            rows_by_table[t] = deduped

    # Unique temp name: parallel workers may race to build the same
    # instance; content is deterministic, so whichever replace lands last
    # is identical.
    tmp_path = out_path.with_suffix(f".{os.getpid()}.{threading.get_ident()}.tmp")
    conn = sqlite3.connect(tmp_path)
    try:
        for t, table in enumerate(env.tables):
            col_sql = ", ".join(f'"{c.name}" {_SQL_TYPE[c.logical_type]}' for c in table.columns)
            conn.execute(f'CREATE TABLE "{table.name}" ({col_sql})')
            marks = ", ".join("?" for _ in table.columns)
            conn.executemany(
                f'INSERT INTO "{table.name}" VALUES ({marks})',
                [tuple(r) for r in rows_by_table[t]],
            )
        conn.commit()
    finally:
        conn.close()
    tmp_path.replace(out_path)
    return fuzz_env


def cleanup_instances(env: DatabaseEnv, cfg: FuzzConfig) -> None:
    shutil.rmtree(cfg.scratch_dir() / env.db_id, ignore_errors=True)


def fuzz_match(
    gold: str,
    pred: str,
    env: DatabaseEnv,
    cfg: FuzzConfig,
    semantics: str = "bag",
) -> FuzzOutcome:
    """True only if gold and pred agree on every randomized instance.

    Instances where gold itself errors are fragile: they are reported and
    excluded from the conjunction; a query fragile everywhere never matches.
    """
    per_instance: list[bool] = []
    fragile: list[int] = []
    for index in range(cfg.instances):
        fuzz_env = randomize_db(env, cfg, index)
        try:
            gold_deno = execute(gold, fuzz_env)
        except ExecutionError:
            fragile.append(index)
            per_instance.append(False)
            continue
        try:
            pred_deno = execute(pred, fuzz_env)
        except ExecutionError:
            per_instance.append(False)
            continue
        per_instance.append(denotations_equal(gold_deno, pred_deno, semantics=semantics))
    usable = [ok for i, ok in enumerate(per_instance) if i not in fragile]
    match = bool(usable) and all(usable)
    return FuzzOutcome(match=match, per_instance=tuple(per_instance), fragile=tuple(fragile))
