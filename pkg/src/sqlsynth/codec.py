"""Reversible pseudo-English encoding of canonical SQL.

The reference generator renders a canonical query into an utterance by
mapping each SQL keyword token through a fixed word table and leaving
identifiers, operators and literals untouched; the paired parser applies
the inverse table. Content inside string literals is never rewritten. A
single-table count query additionally gets a natural phrasing
("how many <table words> are there ?") that the decoder resolves back
against the schema.

This table is a wire-level contract: external reference adapters reproduce
it byte for byte (see docs/adapter_protocol.md).
"""

from __future__ import annotations

import re

WORD_MAP = {
    "select": "show",
    "distinct": "unique",
    "from": "of",
    "as": "aka",
    "join": "with",
    "on": "matching",
    "where": "whenever",
    "and": "plus",
    "or": "otherwise",
    "not": "never",
    "in": "inside",
    "like": "resembling",
    "between": "spanning",
    "group": "grouped",
    "by": "by",
    "having": "keeping",
    "order": "sorted",
    "asc": "ascending",
    "desc": "descending",
    "limit": "top",
    "intersect": "overlapping",
    "union": "together",
    "except": "excluding",
    "count": "tally",
    "sum": "total",
    "avg": "typical",
    "min": "smallest",
    "max": "largest",
}
INVERSE_WORD_MAP = {v: k for k, v in WORD_MAP.items()}
assert len(INVERSE_WORD_MAP) == len(WORD_MAP)

_LITERAL_RE = re.compile(r"'[^']*(?:''[^']*)*'")
_COUNT_TABLE_RE = re.compile(r"^how many (.+) are there \?$")


def _map_segment(segment: str, table: dict[str, str]) -> str:
    return " ".join(table.get(tok, tok) for tok in segment.split(" "))


def _map_outside_literals(text: str, table: dict[str, str]) -> str:
    out: list[str] = []
    pos = 0
    for m in _LITERAL_RE.finditer(text):
        out.append(_map_segment(text[pos : m.start()], table))
        out.append(m.group(0))
        pos = m.end()
    out.append(_map_segment(text[pos:], table))
    return "".join(out)


def table_words(name: str) -> str:
    return name.lower().replace("_", " ")


def encode_query(sql: str) -> str:
    """Canonical SQL string -> deterministic utterance."""
    tokens = sql.split(" ")
    if (
        len(tokens) == 7
        and tokens[:6] == ["select", "count", "(", "*", ")", "from"]
    ):
        return f"how many {table_words(tokens[6])} are there ?"
    return _map_outside_literals(sql, WORD_MAP)


def decode_utterance(utterance: str, table_names: list[str]) -> str:
    """Utterance -> canonical SQL string (exact inverse of encode_query)."""
    m = _COUNT_TABLE_RE.match(utterance)
    if m:
        words = m.group(1)
        for name in table_names:
            if table_words(name) == words:
                return f"select count ( * ) from {name}"
    return _map_outside_literals(utterance, INVERSE_WORD_MAP)
