"""Deterministic fixture databases and corpora shared across the test suite.

Each fixture database is written in the Spider file layout:
<root>/tables.json plus <root>/database/<db_id>/<db_id>.sqlite.
"""

from __future__ import annotations

import json
import sqlite3
from pathlib import Path

_SQL_TYPE = {"number": "NUMERIC", "text": "TEXT", "time": "TEXT", "boolean": "INTEGER", "other": "TEXT"}


def build_schema_entry(db_id: str, tables: dict, primary_keys: list[str], foreign_keys: list[tuple[str, str]]) -> dict:
    """Convert a compact description into a Spider-layout schema entry.

    ``tables`` maps table name to a list of (column, type) pairs; keys are
    written as "table.column" strings.
    """
    table_names = list(tables)
    column_names = [[-1, "*"]]
    column_types = ["text"]
    ordinals: dict[str, int] = {}
    for t_index, (t_name, cols) in enumerate(tables.items()):
        for c_name, c_type in cols:
            ordinals[f"{t_name}.{c_name}"] = len(column_names)
            column_names.append([t_index, c_name])
            column_types.append(c_type)
    return {
        "db_id": db_id,
        "table_names_original": table_names,
        "table_names": table_names,
        "column_names_original": column_names,
        "column_names": column_names,
        "column_types": column_types,
        "primary_keys": [ordinals[k] for k in primary_keys],
        "foreign_keys": [[ordinals[a], ordinals[b]] for a, b in foreign_keys],
    }


def write_database(root: Path, db_id: str, tables: dict, rows: dict) -> Path:
    db_dir = root / "database" / db_id
    db_dir.mkdir(parents=True, exist_ok=True)
    db_path = db_dir / f"{db_id}.sqlite"
    if db_path.exists():
        db_path.unlink()
    conn = sqlite3.connect(db_path)
    for t_name, cols in tables.items():
        col_sql = ", ".join(f'"{c}" {_SQL_TYPE[t]}' for c, t in cols)
        conn.execute(f'CREATE TABLE "{t_name}" ({col_sql})')
        for row in rows.get(t_name, []):
            marks = ", ".join("?" for _ in row)
            conn.execute(f'INSERT INTO "{t_name}" VALUES ({marks})', row)
    conn.commit()
    conn.close()
    return db_path


SHOP_TABLES = {
    "store": [("id", "number"), ("name", "text"), ("city", "text"), ("rating", "number")],
    "product": [
        ("id", "number"),
        ("store_id", "number"),
        ("name", "text"),
        ("price", "number"),
        ("stock", "number"),
    ],
    "sale": [("id", "number"), ("product_id", "number"), ("sold_on", "time"), ("amount", "number")],
}
SHOP_PKS = ["store.id", "product.id", "sale.id"]
SHOP_FKS = [("product.store_id", "store.id"), ("sale.product_id", "product.id")]
SHOP_ROWS = {
    "store": [
        (1, "corner deli", "rome", 4),
        (2, "midtown mart", "oslo", 3),
        (3, "harbor shop", "rome", 5),
        (4, "north market", "kiev", 3),
    ],
    "product": [
        (1, 1, "hammer", 12, 40),
        (2, 1, "rope", 5, 15),
        (3, 2, "hammer", 14, 8),
        (4, 2, "lantern", 30, 3),
        (5, 3, "rope", 6, 22),
        (6, 3, "bucket", 9, 11),
        (7, 4, "lantern", 28, 5),
        (8, 4, "bucket", 8, 30),
    ],
    "sale": [
        (1, 1, "2019-03-01", 2),
        (2, 1, "2019-04-11", 1),
        (3, 2, "2019-04-11", 5),
        (4, 3, "2020-01-20", 1),
        (5, 4, "2020-02-02", 1),
        (6, 5, "2020-02-02", 3),
        (7, 6, "2020-05-30", 2),
        (8, 7, "2021-07-14", 1),
        (9, 8, "2021-07-14", 4),
        (10, 8, "2021-09-01", 2),
    ],
}

CAMPUS_TABLES = {
    "Students": [("id", "number"), ("name", "text"), ("school", "number")],
    "Schools": [("id", "number"), ("name", "text")],
}
CAMPUS_PKS = ["Students.id", "Schools.id"]
CAMPUS_FKS = [("Students.school", "Schools.id")]
CAMPUS_ROWS = {
    "Schools": [(1, "Highland Secondary"), (2, "Bayview High")],
    "Students": [(1, "Ada", 1), (2, "Bob", 1), (3, "Cleo", 2), (4, "Dina", 2)],
}

SOCIAL_TABLES = {
    "Highschooler": [("id", "number"), ("name", "text"), ("grade", "number")],
    "Friend": [("student_id", "number"), ("friend_id", "number")],
}
SOCIAL_PKS = ["Highschooler.id"]
SOCIAL_FKS = [("Friend.student_id", "Highschooler.id"), ("Friend.friend_id", "Highschooler.id")]
SOCIAL_ROWS = {
    "Highschooler": [(1, "Jordan", 9), (2, "Gabriel", 9), (3, "Cassandra", 10), (4, "Haley", 10)],
    "Friend": [(1, 2), (2, 1), (3, 4), (4, 3)],
}

ISLANDS_TABLES = {
    "alpha": [("id", "number"), ("x", "number"), ("label", "text")],
    "beta": [("id", "number"), ("alpha_id", "number"), ("tag", "text")],
    "gamma": [("id", "number"), ("y", "number"), ("note", "text")],
    "delta": [("id", "number"), ("gamma_id", "number"), ("mark", "text")],
}
ISLANDS_PKS = ["alpha.id", "beta.id", "gamma.id", "delta.id"]
ISLANDS_FKS = [("beta.alpha_id", "alpha.id"), ("delta.gamma_id", "gamma.id")]
ISLANDS_ROWS = {
    "alpha": [(1, 10, "a"), (2, 20, "b")],
    "beta": [(1, 1, "t1"), (2, 2, "t2")],
    "gamma": [(1, 5, "n1"), (2, 6, "n2")],
    "delta": [(1, 1, "m1"), (2, 2, "m2")],
}

# A chain a - b - c for multi-hop join-path tests.
CHAIN_TABLES = {
    "a": [("id", "number"), ("va", "number")],
    "b": [("id", "number"), ("a_id", "number"), ("vb", "number")],
    "c": [("id", "number"), ("b_id", "number"), ("vc", "number")],
}
CHAIN_PKS = ["a.id", "b.id", "c.id"]
CHAIN_FKS = [("b.a_id", "a.id"), ("c.b_id", "b.id")]
CHAIN_ROWS = {
    "a": [(1, 100), (2, 200)],
    "b": [(1, 1, 10), (2, 2, 20)],
    "c": [(1, 1, 7), (2, 2, 9)],
}

# One table whose only non-key text column is entirely NULL.
HOLES_TABLES = {
    "t": [("id", "number"), ("gap", "text"), ("v", "number")],
}
HOLES_PKS = ["t.id"]
HOLES_FKS = []
HOLES_ROWS = {"t": [(1, None, 10), (2, None, 20), (3, None, 30)]}

ALL_DBS = {
    "shop": (SHOP_TABLES, SHOP_PKS, SHOP_FKS, SHOP_ROWS),
    "campus": (CAMPUS_TABLES, CAMPUS_PKS, CAMPUS_FKS, CAMPUS_ROWS),
    "social": (SOCIAL_TABLES, SOCIAL_PKS, SOCIAL_FKS, SOCIAL_ROWS),
    "islands": (ISLANDS_TABLES, ISLANDS_PKS, ISLANDS_FKS, ISLANDS_ROWS),
    "chain": (CHAIN_TABLES, CHAIN_PKS, CHAIN_FKS, CHAIN_ROWS),
    "holes": (HOLES_TABLES, HOLES_PKS, HOLES_FKS, HOLES_ROWS),
}

# Training corpus over the shop database: parseable, all queries return
# non-empty results, every filter literal occurs in the stored data.
SHOP_CORPUS = [
    ("shop", "which stores are in rome ?", "select name from store where city = 'rome'"),
    ("shop", "names of stores in oslo", "select name from store where city = 'oslo'"),
    ("shop", "how many products cost more than 8 ?", "select count ( * ) from product where price > 8"),
    ("shop", "how many stores are there ?", "select count ( * ) from store"),
    ("shop", "what is the price of the hammer ?", "select price from product where name = 'hammer'"),
    ("shop", "list product names", "select name from product where stock > 10"),
    (
        "shop",
        "store names selling rope",
        "select T1.name from store as T1 join product as T2 on T1.id = T2.store_id where T2.name = 'rope'",
    ),
    (
        "shop",
        "cities with products over 10",
        "select T1.city from store as T1 join product as T2 on T1.id = T2.store_id where T2.price > 10",
    ),
    ("shop", "cities and store counts", "select city , count ( * ) from store group by city"),
    ("shop", "order products by price", "select name from product order by price desc"),
]

# Two-turn sessions (previous query, current query) for bigram fitting.
SHOP_SESSIONS = [
    (
        "shop",
        "how many products cost more than 8 ?",
        "select count ( * ) from product where price > 8",
        "which ones are called hammer ?",
        "select price from product where name = 'hammer'",
    ),
    (
        "shop",
        "which stores are in rome ?",
        "select name from store where city = 'rome'",
        "how many stores are there ?",
        "select count ( * ) from store",
    ),
]


def write_fixture_dataset(root: Path) -> dict:
    """Write every fixture database plus schema and corpus files under root.

    Returns {"schemas": path, "corpus": path, "root": path}.
    """
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for db_id, (tables, pks, fks, rows) in ALL_DBS.items():
        entries.append(build_schema_entry(db_id, tables, pks, fks))
        write_database(root, db_id, tables, rows)
    schema_path = root / "tables.json"
    schema_path.write_text(json.dumps(entries, indent=1))

    corpus = [
        {"db_id": db, "question": q, "query": sql} for db, q, sql in SHOP_CORPUS
    ]
    for db, q1, sql1, q2, sql2 in SHOP_SESSIONS:
        corpus.append({"db_id": db, "question": q1, "query": sql1, "turn_index": 1})
        corpus.append(
            {"db_id": db, "question": q2, "query": sql2, "prev_query": sql1, "turn_index": 2}
        )
    corpus_path = root / "corpus.json"
    corpus_path.write_text(json.dumps(corpus, indent=1))
    return {"schemas": schema_path, "corpus": corpus_path, "root": root}
