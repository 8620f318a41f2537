"""Rule-based generate/parse model: the pinned reference word codec.

Implements docs/adapter_protocol.md exactly; the pipeline's built-in
"perfect" baseline uses the same table, so round trips through this
process are byte-identical to in-process runs.

A neural model slots in here: replace ``generate`` and ``parse`` with
calls into your inference stack and keep the signatures.
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

_LITERAL_RE = re.compile(r"'[^']*(?:''[^']*)*'")
_COUNT_TABLE_RE = re.compile(r"^how many (.+) are there \?$")


def _map_segment(segment: str, table: dict[str, str]) -> str:
    return " ".join(table.get(tok, tok) for tok in segment.split(" "))


def _map_outside_literals(text: str, table: dict[str, str]) -> str:
    out = []
    pos = 0
    for m in _LITERAL_RE.finditer(text):
        out.append(_map_segment(text[pos : m.start()], table))
        out.append(m.group(0))
        pos = m.end()
    out.append(_map_segment(text[pos:], table))
    return "".join(out)


def _table_words(name: str) -> str:
    return name.lower().replace("_", " ")


def generate(query: str, schema: dict, prev_query: str | None = None) -> str:
    """Canonical SQL -> utterance."""
    tokens = query.split(" ")
    if len(tokens) == 7 and tokens[:6] == ["select", "count", "(", "*", ")", "from"]:
        return f"how many {_table_words(tokens[6])} are there ?"
    return _map_outside_literals(query, WORD_MAP)


def parse(utterance: str, schema: dict, prev_query: str | None = None) -> str:
    """Utterance -> canonical SQL (exact inverse of generate)."""
    m = _COUNT_TABLE_RE.match(utterance)
    if m:
        words = m.group(1)
        for name in schema.get("table_names_original", []):
            if _table_words(name) == words:
                return f"select count ( * ) from {name}"
    return _map_outside_literals(utterance, INVERSE_WORD_MAP)
