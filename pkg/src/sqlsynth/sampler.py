"""Query sampling: fill coarse templates with columns and stored values.

The loop per sample: draw a fillable template from the distribution,
injectively assign typed columns to slots (resampling until the assigned
tables sit in one connected FK component), draw literals uniformly from
the bound columns' stored values, rebuild joins, execute, and discard
queries that fail or return an empty result.
"""

from __future__ import annotations

import sqlite3
from dataclasses import dataclass
from functools import lru_cache
from random import Random
from typing import Callable

from . import canon
from .canon import CoarseTemplate, Literal, Query, from_coarse, render, template_info, to_coarse
from .dist import TemplateDistribution, sample_template, sample_template_conditional
from .errors import (
    EmptyColumnError,
    NoJoinPathError,
    SamplingExhaustedError,
    SqlsynthError,
)
from .execution import connect_readonly, execute
from .schema import ColumnRef, DatabaseEnv

ASSIGN_RETRY_CAP = 50
DEFAULT_MAX_ATTEMPTS = 500


@dataclass(frozen=True)
class SampledQuery:
    env_id: str
    ast: Query
    sql: str
    template: CoarseTemplate
    prev_ast: Query | None = None
    prev_sql: str | None = None
    seed_trace: dict | None = None


@lru_cache(maxsize=256)
def _components(env: DatabaseEnv) -> tuple[int, ...]:
    """Connected-component id per table in the undirected FK graph."""
    comp = list(range(env.table_count))

    def find(x: int) -> int:
        while comp[x] != x:
            comp[x] = comp[comp[x]]
            x = comp[x]
        return x

    for a, b in env.foreign_keys:
        ra, rb = find(a.table_index), find(b.table_index)
        if ra != rb:
            comp[ra] = rb
    return tuple(find(i) for i in range(env.table_count))


@lru_cache(maxsize=256)
def _pools(env: DatabaseEnv) -> dict[str, tuple[ColumnRef, ...]]:
    """Assignable columns per slot type: key slots take key columns, typed
    slots take non-key columns of that logical type."""
    pools: dict[str, list[ColumnRef]] = {"key": []}
    for col in env.all_columns():
        if col.is_key:
            pools["key"].append(col)
        else:
            pools.setdefault(col.logical_type, []).append(col)
    return {stype: tuple(cols) for stype, cols in pools.items()}


def can_fill(env: DatabaseEnv, template: CoarseTemplate) -> bool:
    """True iff the environment has enough distinct columns per slot type and
    enough tables for the template's join arity."""
    if env.table_count < template.join_arity:
        return False
    pools = _pools(env)
    for stype, needed in canon.template_slot_counts(template).items():
        if len(pools.get(stype, ())) < needed:
            return False
    return True


def _scope_connected(env: DatabaseEnv, template: CoarseTemplate, assignment: dict[str, ColumnRef]) -> bool:
    comp = _components(env)
    for scope in template_info(template).scope_slots:
        ids = {comp[assignment[name].table_index] for name in scope}
        if len(ids) > 1:
            return False
    return True


def assign_columns(
    env: DatabaseEnv, template: CoarseTemplate, rng: Random
) -> dict[str, ColumnRef]:
    """Uniform injective type-compatible assignment of columns to slots.

    Resamples up to ASSIGN_RETRY_CAP times until every scope's tables land
    in one FK component; raises NoJoinPathError when the cap is exhausted.
    """
    info = template_info(template)
    pools = _pools(env)
    for _ in range(ASSIGN_RETRY_CAP):
        assignment: dict[str, ColumnRef] = {}
        taken: set[tuple[int, int]] = set()
        ok = True
        for slot in info.column_slots:
            options = [
                c for c in pools.get(slot.stype, ()) if (c.table_index, c.column_index) not in taken
            ]
            if not options:
                ok = False
                break
            choice = options[rng.randrange(len(options))]
            assignment[slot.name] = choice
            taken.add((choice.table_index, choice.column_index))
        if not ok:
            continue
        if _scope_connected(env, template, assignment):
            return assignment
    raise NoJoinPathError(
        f"{env.db_id}: no FK-connected assignment for template {template.text!r} "
        f"within {ASSIGN_RETRY_CAP} retries"
    )


_VALUE_POOL_CACHE: dict[tuple, tuple] = {}


def column_values(env: DatabaseEnv, col: ColumnRef) -> tuple:
    """Distinct non-null stored values of a column, deterministic order."""
    key = (str(env.store_path), env.table_name(col.table_index), col.name)
    cached = _VALUE_POOL_CACHE.get(key)
    if cached is not None:
        return cached
    conn = connect_readonly(env.store_path)
    try:
        rows = conn.execute(
            f'SELECT DISTINCT "{col.name}" FROM "{env.table_name(col.table_index)}" '
            f'WHERE "{col.name}" IS NOT NULL ORDER BY 1'
        ).fetchall()
    finally:
        conn.close()
    values = tuple(r[0] for r in rows if isinstance(r[0], (int, float, str)))
    _VALUE_POOL_CACHE[key] = values
    return values


def clear_value_cache() -> None:
    _VALUE_POOL_CACHE.clear()


def fill_values(
    env: DatabaseEnv,
    template: CoarseTemplate,
    assignment: dict[str, ColumnRef],
    rng: Random,
) -> list[Literal]:
    """One literal per value slot, drawn uniformly from the bound column's
    distinct stored values. Count-valued slots (literals compared against
    count(*) and friends) draw a small integer instead."""
    literals: list[Literal] = []
    for bound in template_info(template).value_slots:
        if bound is None:
            literals.append(Literal(text=str(rng.randint(1, 3)), kind="number"))
            continue
        col = assignment[bound]
        pool = column_values(env, col)
        if not pool:
            raise EmptyColumnError(
                f"{env.db_id}: column {env.table_name(col.table_index)}.{col.name} "
                "has no non-null values"
            )
        value = pool[rng.randrange(len(pool))]
        literals.append(canon.literal_for(value, col.logical_type))
    return literals


def _fill_tables(
    env: DatabaseEnv, template: CoarseTemplate, rng: Random
) -> dict[str, int]:
    return {
        slot: rng.randrange(env.table_count)
        for slot in template_info(template).table_slots
    }


def _sample_one(
    env: DatabaseEnv,
    draw_template: Callable[[], CoarseTemplate],
    rng: Random,
    max_attempts: int,
    connection: sqlite3.Connection | None = None,
) -> SampledQuery:
    failures: dict[str, int] = {}
    for attempt in range(max_attempts):
        template = draw_template()
        try:
            assignment = assign_columns(env, template, rng)
            tables = _fill_tables(env, template, rng)
            values = fill_values(env, template, assignment, rng)
            ast = from_coarse(template, assignment, values, env, tables=tables)
            sql = render(ast, env)
            denotation = execute(sql, env, connection=connection)
        except SqlsynthError as exc:
            failures[type(exc).__name__] = failures.get(type(exc).__name__, 0) + 1
            continue
        if not denotation.rows:
            failures["EmptyDenotation"] = failures.get("EmptyDenotation", 0) + 1
            continue
        assert to_coarse(ast, env).text == template.text
        trace = {
            "template": template.text,
            "assignment": {
                slot: f"{env.table_name(c.table_index)}.{c.name}"
                for slot, c in assignment.items()
            },
            "tables": {slot: env.table_name(t) for slot, t in tables.items()},
            "values": [lit.text for lit in values],
            "attempt": attempt + 1,
        }
        return SampledQuery(
            env_id=env.db_id, ast=ast, sql=sql, template=template, seed_trace=trace
        )
    raise SamplingExhaustedError(max_attempts, failures)


def sample_query(
    env: DatabaseEnv,
    dist: TemplateDistribution,
    rng: Random,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    connection: sqlite3.Connection | None = None,
) -> SampledQuery:
    """Sample one executable, non-empty query in the environment."""
    fillable = lambda tpl: can_fill(env, tpl)
    return _sample_one(
        env,
        lambda: sample_template(dist, fillable, rng),
        rng,
        max_attempts,
        connection=connection,
    )


def sample_turn_sequence(
    env: DatabaseEnv,
    dist: TemplateDistribution,
    rng: Random,
    turns: int,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    connection: sqlite3.Connection | None = None,
) -> list[SampledQuery]:
    """Sample a multi-turn sequence: the first query from the unigram, each
    later one conditioned on the previous query's template."""
    if turns < 1:
        raise ValueError("turns must be >= 1")
    fillable = lambda tpl: can_fill(env, tpl)
    sequence: list[SampledQuery] = []
    for turn in range(turns):
        if turn == 0:
            drawer = lambda: sample_template(dist, fillable, rng)
        else:
            prev_tpl = sequence[-1].template
            drawer = lambda: sample_template_conditional(dist, prev_tpl, fillable, rng)
        sampled = _sample_one(env, drawer, rng, max_attempts, connection=connection)
        if turn > 0:
            sampled = SampledQuery(
                env_id=sampled.env_id,
                ast=sampled.ast,
                sql=sampled.sql,
                template=sampled.template,
                prev_ast=sequence[-1].ast,
                prev_sql=sequence[-1].sql,
                seed_trace=sampled.seed_trace,
            )
        sequence.append(sampled)
    return sequence
