"""Database schemas, task corpora, and foreign-key join-path inference.

The schema file layout is the Spider tables-file layout, bit-compatible:
a JSON array of objects with db_id, table_names_original,
column_names_original (list of [table_index, name]), column_types,
primary_keys (global column ordinals) and foreign_keys (pairs of global
column ordinals). The global ordinal space may include the conventional
leading [-1, "*"] entry, which never becomes a real column.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import NoJoinPathError, SchemaFormatError, SchemaIntegrityError

LOGICAL_TYPES = ("text", "number", "time", "boolean", "other")

_TYPE_MAP = {
    "text": "text",
    "number": "number",
    "int": "number",
    "real": "number",
    "time": "time",
    "date": "time",
    "datetime": "time",
    "boolean": "boolean",
}


def map_logical_type(raw: str) -> str:
    """Collapse a schema-file type string onto the closed logical type set."""
    return _TYPE_MAP.get(raw.strip().lower(), "other")


@dataclass(frozen=True)
class ColumnRef:
    """A column position in a schema, with the typing used for slot filling."""

    table_index: int
    column_index: int
    name: str
    logical_type: str
    is_key: bool

    def __post_init__(self):
        if self.logical_type not in LOGICAL_TYPES:
            raise SchemaIntegrityError(
                f"column {self.name}: bad logical type {self.logical_type!r}"
            )


@dataclass(frozen=True)
class Table:
    name: str
    columns: tuple[ColumnRef, ...]


JoinCondition = tuple[ColumnRef, ColumnRef]


@dataclass(frozen=True)
class DatabaseEnv:
    """One executable environment: schema plus the path of its SQLite file.

    Immutable after load; safe to share read-only across parallel workers.
    """

    db_id: str
    tables: tuple[Table, ...]
    foreign_keys: tuple[JoinCondition, ...]
    primary_keys: tuple[ColumnRef, ...]
    store_path: Path | None = None

    @property
    def table_count(self) -> int:
        return len(self.tables)

    def table_name(self, table_index: int) -> str:
        return self.tables[table_index].name

    def columns_of(self, table_index: int) -> tuple[ColumnRef, ...]:
        return self.tables[table_index].columns

    def all_columns(self) -> Iterable[ColumnRef]:
        for table in self.tables:
            yield from table.columns

    def find_table(self, name: str) -> int | None:
        needle = name.lower()
        for i, table in enumerate(self.tables):
            if table.name.lower() == needle:
                return i
        return None

    def find_column(self, table_index: int, name: str) -> ColumnRef | None:
        needle = name.lower()
        for col in self.tables[table_index].columns:
            if col.name.lower() == needle:
                return col
        return None

    def column(self, table_index: int, column_index: int) -> ColumnRef:
        return self.tables[table_index].columns[column_index]


@dataclass(frozen=True)
class CorpusExample:
    """One utterance/SQL pair, with previous-query context for multi-turn tasks."""

    db_id: str
    utterance: str
    gold_sql: str
    prev_sql: str | None = None
    turn_index: int = 1
    provenance: str = "original"

    def __post_init__(self):
        if (self.prev_sql is not None) != (self.turn_index > 1):
            raise SchemaFormatError(
                f"corpus example for {self.db_id}: prev_sql must be present "
                f"exactly when turn_index > 1 (got turn_index={self.turn_index})"
            )


def load_schemas(path: str | Path, data_root: str | Path | None = None) -> list[DatabaseEnv]:
    """Load every database environment from a Spider-layout schema file.

    ``data_root`` locates the executable SQLite files at
    <data_root>/<db_id>/<db_id>.sqlite; it defaults to a ``database``
    directory next to the schema file.
    """
    path = Path(path)
    if data_root is None:
        data_root = path.parent / "database"
    data_root = Path(data_root)

    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaFormatError(f"cannot read schema file {path}: {exc}") from exc
    if not isinstance(raw, list):
        raise SchemaFormatError(f"schema file {path}: expected a JSON array")

    envs = []
    for entry in raw:
        envs.append(_parse_env(entry, data_root))
    return envs


def _parse_env(entry: dict, data_root: Path) -> DatabaseEnv:
    db_id = entry.get("db_id")
    if not isinstance(db_id, str) or not db_id:
        raise SchemaFormatError(f"schema entry missing db_id: {entry!r:.80}")

    def need(field_name: str) -> list:
        value = entry.get(field_name)
        if not isinstance(value, list):
            raise SchemaFormatError(f"db {db_id}: missing or non-list field {field_name}")
        return value

    table_names = need("table_names_original")
    column_names = need("column_names_original")
    column_types = need("column_types")
    primary_keys = entry.get("primary_keys", [])
    foreign_keys = entry.get("foreign_keys", [])
    if len(column_types) != len(column_names):
        raise SchemaFormatError(
            f"db {db_id}: column_types length {len(column_types)} != "
            f"column_names_original length {len(column_names)}"
        )

    lowered_tables = [str(name).lower() for name in table_names]
    if len(set(lowered_tables)) != len(lowered_tables):
        raise SchemaIntegrityError(f"db {db_id}: duplicate table name (case-insensitive)")

    # Global column ordinals (the file's numbering, star entry included) map
    # onto per-table positions.
    global_to_pos: dict[int, tuple[int, int]] = {}
    per_table_names: list[list[str]] = [[] for _ in table_names]
    per_table_types: list[list[str]] = [[] for _ in table_names]
    for ordinal, item in enumerate(column_names):
        if not (isinstance(item, list) and len(item) == 2):
            raise SchemaFormatError(f"db {db_id}: bad column_names_original entry {item!r}")
        table_index, col_name = item
        if table_index == -1:
            continue
        if not 0 <= table_index < len(table_names):
            raise SchemaIntegrityError(
                f"db {db_id}: column {col_name!r} references table index {table_index}"
            )
        global_to_pos[ordinal] = (table_index, len(per_table_names[table_index]))
        per_table_names[table_index].append(str(col_name))
        per_table_types[table_index].append(str(column_types[ordinal]))

    for t_index, names in enumerate(per_table_names):
        lowered = [n.lower() for n in names]
        if len(set(lowered)) != len(lowered):
            raise SchemaIntegrityError(
                f"db {db_id}: duplicate column name in table {table_names[t_index]}"
            )

    def resolve(ordinal, what: str) -> tuple[int, int]:
        if not isinstance(ordinal, int) or ordinal not in global_to_pos:
            raise SchemaIntegrityError(f"db {db_id}: {what} references column ordinal {ordinal}")
        return global_to_pos[ordinal]

    pk_positions = {resolve(o, "primary_keys") for o in primary_keys}
    fk_position_pairs = []
    for pair in foreign_keys:
        if not (isinstance(pair, list) and len(pair) == 2):
            raise SchemaFormatError(f"db {db_id}: bad foreign_keys entry {pair!r}")
        fk_position_pairs.append((resolve(pair[0], "foreign_keys"), resolve(pair[1], "foreign_keys")))

    key_positions = set(pk_positions)
    for a, b in fk_position_pairs:
        key_positions.add(a)
        key_positions.add(b)

    tables = []
    for t_index, name in enumerate(table_names):
        cols = tuple(
            ColumnRef(
                table_index=t_index,
                column_index=c_index,
                name=col_name,
                logical_type=map_logical_type(per_table_types[t_index][c_index]),
                is_key=(t_index, c_index) in key_positions,
            )
            for c_index, col_name in enumerate(per_table_names[t_index])
        )
        tables.append(Table(name=str(name), columns=cols))

    def col_at(pos: tuple[int, int]) -> ColumnRef:
        return tables[pos[0]].columns[pos[1]]

    return DatabaseEnv(
        db_id=db_id,
        tables=tuple(tables),
        foreign_keys=tuple((col_at(a), col_at(b)) for a, b in fk_position_pairs),
        primary_keys=tuple(col_at(p) for p in sorted(pk_positions)),
        store_path=data_root / db_id / f"{db_id}.sqlite",
    )


def env_to_schema_entry(env: DatabaseEnv) -> dict:
    """Serialize one environment back into the schema-file entry layout
    (single-db slice, used inside adapter requests)."""
    column_names: list[list] = [[-1, "*"]]
    column_types: list[str] = ["text"]
    ordinals: dict[tuple[int, int], int] = {}
    for t_index, table in enumerate(env.tables):
        for col in table.columns:
            ordinals[(t_index, col.column_index)] = len(column_names)
            column_names.append([t_index, col.name])
            column_types.append(col.logical_type)

    def ordinal(col: ColumnRef) -> int:
        return ordinals[(col.table_index, col.column_index)]

    return {
        "db_id": env.db_id,
        "table_names_original": [t.name for t in env.tables],
        "column_names_original": column_names,
        "column_types": column_types,
        "primary_keys": [ordinal(c) for c in env.primary_keys],
        "foreign_keys": [[ordinal(a), ordinal(b)] for a, b in env.foreign_keys],
    }


def load_corpus(path: str | Path) -> list[CorpusExample]:
    """Load a corpus file: JSON array of {db_id, question, query, prev_query?, turn_index?}."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaFormatError(f"cannot read corpus file {path}: {exc}") from exc
    if not isinstance(raw, list):
        raise SchemaFormatError(f"corpus file {path}: expected a JSON array")

    examples = []
    for i, entry in enumerate(raw):
        try:
            examples.append(
                CorpusExample(
                    db_id=entry["db_id"],
                    utterance=entry["question"],
                    gold_sql=entry["query"],
                    prev_sql=entry.get("prev_query"),
                    turn_index=int(entry.get("turn_index", 1)),
                    provenance=entry.get("provenance", "original"),
                )
            )
        except (KeyError, TypeError) as exc:
            raise SchemaFormatError(f"corpus file {path}, entry {i}: {exc}") from exc
    return examples


def save_corpus(examples: Sequence[CorpusExample], path: str | Path) -> None:
    """Write examples back out in the corpus file layout (lossless round trip)."""
    payload = []
    for ex in examples:
        item: dict = {"db_id": ex.db_id, "question": ex.utterance, "query": ex.gold_sql}
        if ex.prev_sql is not None:
            item["prev_query"] = ex.prev_sql
        item["turn_index"] = ex.turn_index
        item["provenance"] = ex.provenance
        payload.append(item)
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def _fk_adjacency(env: DatabaseEnv) -> dict[int, list[tuple[int, JoinCondition]]]:
    adjacency: dict[int, list[tuple[int, JoinCondition]]] = {
        i: [] for i in range(env.table_count)
    }
    for a, b in env.foreign_keys:
        if a.table_index == b.table_index:
            continue
        adjacency[a.table_index].append((b.table_index, (a, b)))
        adjacency[b.table_index].append((a.table_index, (a, b)))
    # Deterministic neighbor order: ties broken by smallest (table, column) pair.
    for neighbors in adjacency.values():
        neighbors.sort(
            key=lambda item: (
                item[0],
                item[1][0].table_index,
                item[1][0].column_index,
                item[1][1].table_index,
                item[1][1].column_index,
            )
        )
    return adjacency


def join_tree(
    env: DatabaseEnv, tables: Iterable[int], start: int | None = None
) -> tuple[list[int], list[JoinCondition]]:
    """Connect the requested tables in the FK graph.

    Returns the table visit order (targets plus any intermediate tables, each
    introduced by exactly one join condition) and the join conditions aligned
    with ``order[1:]``. Grows a tree by repeatedly attaching the nearest
    unconnected target via breadth-first search, so pairs and chains get a
    minimum-edge path.
    """
    targets = sorted(set(tables))
    if not targets:
        raise ValueError("tables must be non-empty")
    for t in targets:
        if not 0 <= t < env.table_count:
            raise ValueError(f"table ordinal {t} out of range for {env.db_id}")

    if start is None:
        start = targets[0]
    order = [start]
    conditions: list[JoinCondition] = []
    connected = {start}
    remaining = [t for t in targets if t != start]
    adjacency = _fk_adjacency(env)

    while remaining:
        parent: dict[int, tuple[int, JoinCondition]] = {}
        queue = deque(sorted(connected))
        found = None
        seen = set(connected)
        while queue:
            node = queue.popleft()
            if node in remaining and node not in connected:
                found = node
                break
            for neighbor, cond in adjacency[node]:
                if neighbor not in seen:
                    seen.add(neighbor)
                    parent[neighbor] = (node, cond)
                    queue.append(neighbor)
        if found is None:
            raise NoJoinPathError(
                f"{env.db_id}: tables {targets} not connected in the FK graph"
            )
        # Walk back to the connected set, then attach the segment outward.
        segment = []
        node = found
        while node not in connected:
            prev, cond = parent[node]
            segment.append((node, cond))
            node = prev
        for table, cond in reversed(segment):
            order.append(table)
            conditions.append(cond)
            connected.add(table)
        remaining = [t for t in remaining if t not in connected]

    return order, conditions


def fk_join_path(env: DatabaseEnv, tables: Iterable[int]) -> list[JoinCondition]:
    """Join conditions connecting the requested tables; empty for a single table."""
    _, conditions = join_tree(env, tables)
    return conditions
