"""Parse, normalize, render, and template-ize the supported SQL subset.

The supported subset is the query language of the target corpora: select
(plus distinct, aggregates, arithmetic between two columns), joins,
where/having with and/or, group by, order by asc/desc, limit,
intersect/union/except, and non-correlated subqueries inside where/having
conditions.

Canonical rendering: keywords lowercased, one space between tokens, table
aliases T1..Tn assigned by first appearance (only in multi-table scopes),
string literals single-quoted, numeric literals bare. Cross-table
column-equality conditions written in WHERE are normalized into join
conditions when the WHERE clause is purely AND-connected, so both join
spellings canonicalize identically.

Coarse templates replace column mentions with typed slots (key1, text1,
number1, ...) and literals with ``val`` slots, and drop FROM/JOIN clauses
entirely. Slot identity is (column, mention role): mentions in select,
group by and order by share one slot; mentions inside where/having
conditions are numbered separately. Repeats within a role reuse the slot.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Iterable, Union

from .errors import (
    AssignmentError,
    ResolutionError,
    UnsupportedSyntaxError,
)
from .schema import ColumnRef, DatabaseEnv, JoinCondition, join_tree

AGGREGATES = ("count", "sum", "avg", "min", "max")
COMPARISONS = ("=", "!=", "<", "<=", ">", ">=")
SET_OPS = ("intersect", "union", "except")
ARITH_OPS = ("+", "-", "*", "/")

_KEYWORDS = {
    "select", "distinct", "from", "as", "join", "on", "where", "and", "or",
    "not", "in", "like", "between", "group", "by", "having", "order", "asc",
    "desc", "limit", "intersect", "union", "except",
}

_SLOT_RE = re.compile(r"^(key|text|number|time|boolean|other)(\d+)$")


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SlotRef:
    """A typed column slot inside a coarse template skeleton."""

    name: str
    stype: str


@dataclass(frozen=True)
class Star:
    """The ``*`` operand; ``table`` is set for a qualified star at parse time."""

    table: int | None = None


@dataclass(frozen=True)
class Literal:
    """A literal value.

    ``kind`` is "string" or "number" for concrete literals, "slot" for a
    template value slot (renders as ``val``), and "placeholder" for a
    stripped value (renders as ``<val>``).
    """

    text: str
    kind: str


Operand = Union[ColumnRef, SlotRef, Star]


@dataclass(frozen=True)
class Expr:
    """A value expression: an operand, optionally aggregated, optionally
    combined with a second operand by an arithmetic operator."""

    agg: str | None
    distinct: bool
    left: Operand
    arith: str | None = None
    right: Operand | None = None


@dataclass(frozen=True)
class Condition:
    negated: bool
    left: Expr
    op: str  # one of COMPARISONS, "like", "in", "between"
    right: Union[Literal, Expr, "Query"]
    right2: Literal | None = None  # upper bound for between


@dataclass(frozen=True)
class CondList:
    conditions: tuple[Condition, ...] = ()
    connectors: tuple[str, ...] = ()  # "and"/"or", len == len(conditions) - 1

    def __bool__(self) -> bool:
        return bool(self.conditions)


@dataclass(frozen=True)
class FromClause:
    tables: tuple[int, ...]  # distinct table ordinals, appearance order
    joins: tuple[tuple[JoinCondition, ...], ...] = ()  # joins[i] binds tables[i+1]


@dataclass(frozen=True)
class OrderBy:
    items: tuple[Expr, ...]
    direction: str = "asc"


@dataclass(frozen=True)
class Query:
    select: tuple[Expr, ...]
    select_distinct: bool = False
    from_: FromClause | None = None  # None in template skeletons
    where: CondList = CondList()
    group_by: tuple[Operand, ...] = ()
    having: CondList = CondList()
    order_by: OrderBy | None = None
    limit: int | None = None
    set_op: tuple[str, "Query"] | None = None


SqlAst = Query


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Token:
    kind: str  # IDENT, QUALIFIED, NUMBER, STRING, OP
    text: str
    qualifier: str | None = None  # for QUALIFIED: the part before the dot


_TOKEN_RE = re.compile(
    r"""
    \s+
  | '(?:[^']|'')*'
  | "(?:[^"]|"")*"
  | \d+\.\d+ | \.\d+ | \d+
  | [A-Za-z_][A-Za-z0-9_]*(?:\.(?:[A-Za-z_][A-Za-z0-9_]*|\*))?
  | <> | != | <= | >= | [<>=+\-*/(),;]
    """,
    re.VERBOSE,
)


def tokenize(sql: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(sql):
        m = _TOKEN_RE.match(sql, pos)
        if not m:
            raise UnsupportedSyntaxError(sql[pos], f"cannot tokenize at offset {pos}")
        pos = m.end()
        text = m.group(0)
        if text.isspace():
            continue
        if text[0] == "'":
            tokens.append(_Token("STRING", text[1:-1].replace("''", "'")))
        elif text[0] == '"':
            tokens.append(_Token("STRING", text[1:-1].replace('""', '"')))
        elif text[0].isdigit() or text[0] == ".":
            tokens.append(_Token("NUMBER", text))
        elif text[0].isalpha() or text[0] == "_":
            if "." in text:
                qualifier, name = text.split(".", 1)
                tokens.append(_Token("QUALIFIED", name, qualifier=qualifier))
            else:
                tokens.append(_Token("IDENT", text))
        elif text == ";":
            continue
        else:
            tokens.append(_Token("OP", "!=" if text == "<>" else text))
    return tokens


# ---------------------------------------------------------------------------
# Raw parse structures (identifiers not yet resolved against a schema)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _RawCol:
    text: str
    qualifier: str | None  # alias or table name, None when bare
    star: bool = False


@dataclass(frozen=True)
class _RawFrom:
    items: tuple[tuple[str, str | None], ...]  # (table name, alias or None)
    joins: tuple[tuple[tuple[_RawCol, _RawCol], ...], ...]


class _Parser:
    """Recursive-descent parser for both concrete SQL and template token
    streams (``template_mode`` switches column tokens to slots and drops
    the FROM clause from the grammar)."""

    def __init__(self, tokens: list[_Token], template_mode: bool = False):
        self.tokens = tokens
        self.pos = 0
        self.template_mode = template_mode

    # -- token helpers ------------------------------------------------------

    def _peek(self, ahead: int = 0) -> _Token | None:
        i = self.pos + ahead
        return self.tokens[i] if i < len(self.tokens) else None

    def _peek_kw(self, ahead: int = 0) -> str | None:
        tok = self._peek(ahead)
        if tok and tok.kind == "IDENT":
            low = tok.text.lower()
            if low in _KEYWORDS or low in AGGREGATES:
                return low
        return None

    def _take(self) -> _Token:
        tok = self._peek()
        if tok is None:
            raise UnsupportedSyntaxError("<end>", "unexpected end of query")
        self.pos += 1
        return tok

    def _accept_kw(self, *words: str) -> str | None:
        kw = self._peek_kw()
        if kw in words:
            self.pos += 1
            return kw
        return None

    def _expect_kw(self, word: str) -> None:
        if not self._accept_kw(word):
            got = self._peek()
            raise UnsupportedSyntaxError(got.text if got else "<end>", f"expected {word!r}")

    def _accept_op(self, *ops: str) -> str | None:
        tok = self._peek()
        if tok and tok.kind == "OP" and tok.text in ops:
            self.pos += 1
            return tok.text
        return None

    def _expect_op(self, op: str) -> None:
        if not self._accept_op(op):
            got = self._peek()
            raise UnsupportedSyntaxError(got.text if got else "<end>", f"expected {op!r}")

    # -- grammar ------------------------------------------------------------

    def parse(self) -> Query:
        query = self._query()
        if self.pos != len(self.tokens):
            raise UnsupportedSyntaxError(self.tokens[self.pos].text, "trailing tokens")
        return query

    def _query(self) -> Query:
        core = self._select_core()
        op = self._accept_kw(*SET_OPS)
        if op:
            if self._peek_kw() == "all":
                raise UnsupportedSyntaxError(f"{op} all")
            right = self._query()
            return replace(core, set_op=(op, right))
        return core

    def _select_core(self) -> Query:
        self._expect_kw("select")
        distinct = bool(self._accept_kw("distinct"))
        items = [self._expr()]
        while self._accept_op(","):
            items.append(self._expr())

        from_ = None
        if not self.template_mode:
            self._expect_kw("from")
            from_ = self._from_clause()

        where = CondList()
        if self._accept_kw("where"):
            where = self._cond_list()

        group_by: list = []
        having = CondList()
        if self._accept_kw("group"):
            self._expect_kw("by")
            group_by.append(self._group_item())
            while self._accept_op(","):
                group_by.append(self._group_item())
            if self._accept_kw("having"):
                having = self._cond_list()

        order_by = None
        if self._accept_kw("order"):
            self._expect_kw("by")
            order_items = [self._expr()]
            while self._accept_op(","):
                order_items.append(self._expr())
            direction = self._accept_kw("asc", "desc") or "asc"
            order_by = OrderBy(items=tuple(order_items), direction=direction)

        limit = None
        if self._accept_kw("limit"):
            tok = self._take()
            if tok.kind != "NUMBER" or not tok.text.isdigit():
                raise UnsupportedSyntaxError(tok.text, "limit expects an integer")
            limit = int(tok.text)

        return Query(
            select=tuple(items),
            select_distinct=distinct,
            from_=from_,
            where=where,
            group_by=tuple(group_by),
            having=having,
            order_by=order_by,
            limit=limit,
        )

    def _from_clause(self) -> _RawFrom:
        items = [self._table_ref()]
        joins: list[tuple] = []
        while True:
            if self._accept_kw("join"):
                items.append(self._table_ref())
                conds: list = []
                if self._accept_kw("on"):
                    conds.append(self._join_cond())
                    while True:
                        save = self.pos
                        if self._accept_kw("and"):
                            try:
                                conds.append(self._join_cond())
                                continue
                            except UnsupportedSyntaxError:
                                self.pos = save
                        break
                joins.append(tuple(conds))
            elif self._accept_op(","):
                items.append(self._table_ref())
                joins.append(())
            else:
                break
        return _RawFrom(items=tuple(items), joins=tuple(joins))

    def _table_ref(self) -> tuple[str, str | None]:
        tok = self._peek()
        if tok and tok.kind == "OP" and tok.text == "(":
            raise UnsupportedSyntaxError("subquery in FROM")
        if tok is None or tok.kind != "IDENT" or self._peek_kw() is not None:
            raise UnsupportedSyntaxError(tok.text if tok else "<end>", "expected table name")
        self._take()
        alias = None
        if self._accept_kw("as"):
            alias_tok = self._take()
            if alias_tok.kind != "IDENT":
                raise UnsupportedSyntaxError(alias_tok.text, "expected alias")
            alias = alias_tok.text
        return tok.text, alias

    def _join_cond(self) -> tuple[_RawCol, _RawCol]:
        left = self._column_token()
        self._expect_op("=")
        right = self._column_token()
        return left, right

    def _column_token(self) -> _RawCol:
        tok = self._take()
        if tok.kind == "QUALIFIED":
            return _RawCol(tok.text, tok.qualifier, star=tok.text == "*")
        if tok.kind == "IDENT" and tok.text.lower() not in _KEYWORDS:
            return _RawCol(tok.text, None)
        raise UnsupportedSyntaxError(tok.text, "expected column reference")

    def _group_item(self) -> Operand:
        # Tolerate a parenthesized single column, as some preprocessed
        # corpora wrap group-by columns in parens.
        if self._accept_op("("):
            col = self._operand()
            self._expect_op(")")
            return col
        return self._operand()

    def _operand(self) -> Operand:
        tok = self._peek()
        if tok is None:
            raise UnsupportedSyntaxError("<end>", "expected operand")
        if tok.kind == "OP" and tok.text == "*":
            self._take()
            return Star()
        if tok.kind == "QUALIFIED":
            if self.template_mode:
                raise UnsupportedSyntaxError(tok.text, "qualified names cannot appear in templates")
            self._take()
            if tok.text == "*":
                return _RawCol("*", tok.qualifier, star=True)  # type: ignore[return-value]
            return _RawCol(tok.text, tok.qualifier)  # type: ignore[return-value]
        if tok.kind == "IDENT":
            low = tok.text.lower()
            if low in _KEYWORDS or low in AGGREGATES:
                raise UnsupportedSyntaxError(tok.text, "expected operand")
            self._take()
            if self.template_mode:
                m = _SLOT_RE.match(tok.text)
                if not m:
                    raise UnsupportedSyntaxError(tok.text, "expected a typed slot")
                return SlotRef(name=tok.text, stype=m.group(1))
            return _RawCol(tok.text, None)  # type: ignore[return-value]
        raise UnsupportedSyntaxError(tok.text, "expected operand")

    def _expr(self) -> Expr:
        agg = None
        distinct = False
        kw = self._peek_kw()
        if kw in AGGREGATES:
            nxt = self._peek(1)
            if nxt and nxt.kind == "OP" and nxt.text == "(":
                agg = kw
                self.pos += 2
                distinct = bool(self._accept_kw("distinct"))
                left, arith, right = self._operand_pair()
                self._expect_op(")")
                return Expr(agg=agg, distinct=distinct, left=left, arith=arith, right=right)
        left, arith, right = self._operand_pair()
        return Expr(agg=None, distinct=False, left=left, arith=arith, right=right)

    def _operand_pair(self):
        left = self._operand()
        arith = None
        right = None
        tok = self._peek()
        if tok and tok.kind == "OP" and tok.text in ARITH_OPS:
            nxt = self._peek(1)
            if nxt and nxt.kind in ("IDENT", "QUALIFIED"):
                arith = self._take().text
                right = self._operand()
        return left, arith, right

    def _cond_list(self) -> CondList:
        conditions = [self._condition()]
        connectors: list[str] = []
        while True:
            conn = self._accept_kw("and", "or")
            if not conn:
                break
            connectors.append(conn)
            conditions.append(self._condition())
        return CondList(conditions=tuple(conditions), connectors=tuple(connectors))

    def _condition(self) -> Condition:
        left = self._expr()
        negated = bool(self._accept_kw("not"))
        kw = self._accept_kw("in", "like", "between")
        if negated and not kw:
            got = self._peek()
            raise UnsupportedSyntaxError(got.text if got else "<end>", "expected in/like after not")
        if kw == "in":
            self._expect_op("(")
            if self._peek_kw() != "select":
                raise UnsupportedSyntaxError("in (...)", "only subqueries are supported inside IN")
            sub = self._query()
            self._expect_op(")")
            return Condition(negated=negated, left=left, op="in", right=sub)
        if kw == "like":
            return Condition(negated=negated, left=left, op="like", right=self._literal())
        if kw == "between":
            low = self._literal()
            self._expect_kw("and")
            high = self._literal()
            return Condition(negated=negated, left=left, op="between", right=low, right2=high)
        op = self._accept_op(*COMPARISONS)
        if not op:
            got = self._peek()
            raise UnsupportedSyntaxError(got.text if got else "<end>", "expected comparison")
        tok = self._peek()
        if tok and tok.kind == "OP" and tok.text == "(":
            self._take()
            if self._peek_kw() != "select":
                raise UnsupportedSyntaxError("( ... )", "expected subquery")
            sub = self._query()
            self._expect_op(")")
            return Condition(negated=False, left=left, op=op, right=sub)
        if tok and (
            tok.kind in ("STRING", "NUMBER")
            or (tok.kind == "OP" and tok.text == "-")
            or (self.template_mode and tok.kind == "IDENT" and tok.text.lower() == "val")
        ):
            return Condition(negated=False, left=left, op=op, right=self._literal())
        return Condition(negated=False, left=left, op=op, right=self._expr())

    def _literal(self) -> Literal:
        tok = self._take()
        if tok.kind == "STRING":
            return Literal(text=tok.text, kind="string")
        if tok.kind == "NUMBER":
            return Literal(text=tok.text, kind="number")
        if tok.kind == "OP" and tok.text == "-":
            num = self._take()
            if num.kind != "NUMBER":
                raise UnsupportedSyntaxError(num.text, "expected number after -")
            return Literal(text="-" + num.text, kind="number")
        if self.template_mode and tok.kind == "IDENT" and tok.text.lower() == "val":
            return Literal(text="", kind="slot")
        raise UnsupportedSyntaxError(tok.text, "expected literal")


# ---------------------------------------------------------------------------
# Resolution: raw identifiers -> ColumnRef against a DatabaseEnv
# ---------------------------------------------------------------------------

class _Resolver:
    def __init__(self, env: DatabaseEnv):
        self.env = env

    def resolve_query(self, q: Query) -> Query:
        raw_from = q.from_
        assert isinstance(raw_from, _RawFrom)
        table_indices: list[int] = []
        alias_map: dict[str, int] = {}
        name_map: dict[str, int] = {}
        for name, alias in raw_from.items:
            t = self.env.find_table(name)
            if t is None:
                raise ResolutionError(f"{self.env.db_id}: unknown table {name!r}")
            if t in table_indices:
                raise UnsupportedSyntaxError("self-join", f"table {name!r} appears twice")
            pos = len(table_indices)
            table_indices.append(t)
            name_map[name.lower()] = pos
            if alias:
                alias_map[alias.lower()] = pos

        scope = _Scope(self.env, tuple(table_indices), alias_map, name_map)

        joins = []
        for cond_group in raw_from.joins:
            joins.append(tuple(self._join_condition(scope, a, b) for a, b in cond_group))

        resolved = Query(
            select=tuple(self._expr(scope, e) for e in q.select),
            select_distinct=q.select_distinct,
            from_=FromClause(tables=tuple(table_indices), joins=tuple(joins)),
            where=self._cond_list(scope, q.where),
            group_by=tuple(self._operand(scope, g) for g in q.group_by),
            having=self._cond_list(scope, q.having),
            order_by=(
                OrderBy(
                    items=tuple(self._expr(scope, e) for e in q.order_by.items),
                    direction=q.order_by.direction,
                )
                if q.order_by
                else None
            ),
            limit=q.limit,
            set_op=(q.set_op[0], self.resolve_query(q.set_op[1])) if q.set_op else None,
        )
        return _migrate_join_conditions(resolved)

    def _join_condition(self, scope: "_Scope", a: _RawCol, b: _RawCol) -> JoinCondition:
        ca = self._column(scope, a)
        cb = self._column(scope, b)
        return _orient(scope.tables, ca, cb)

    def _operand(self, scope: "_Scope", op) -> Operand:
        if isinstance(op, Star):
            return op
        if isinstance(op, _RawCol):
            if op.star:
                pos = scope.position_of(op.qualifier)
                return Star(table=scope.tables[pos])
            return self._column(scope, op)
        raise ResolutionError(f"unexpected operand {op!r}")

    def _column(self, scope: "_Scope", raw: _RawCol) -> ColumnRef:
        if raw.qualifier is not None:
            pos = scope.position_of(raw.qualifier)
            col = self.env.find_column(scope.tables[pos], raw.text)
            if col is None:
                raise ResolutionError(
                    f"{self.env.db_id}: no column {raw.text!r} in table "
                    f"{self.env.table_name(scope.tables[pos])!r}"
                )
            return col
        for t in scope.tables:
            col = self.env.find_column(t, raw.text)
            if col is not None:
                return col
        raise ResolutionError(f"{self.env.db_id}: cannot resolve column {raw.text!r}")

    def _expr(self, scope: "_Scope", e: Expr) -> Expr:
        return Expr(
            agg=e.agg,
            distinct=e.distinct,
            left=self._operand(scope, e.left),
            arith=e.arith,
            right=self._operand(scope, e.right) if e.right is not None else None,
        )

    def _cond_list(self, scope: "_Scope", cl: CondList) -> CondList:
        return CondList(
            conditions=tuple(self._condition(scope, c) for c in cl.conditions),
            connectors=cl.connectors,
        )

    def _condition(self, scope: "_Scope", c: Condition) -> Condition:
        left = self._expr(scope, c.left)
        right = c.right
        if isinstance(right, Query):
            right = self.resolve_query(right)
        elif isinstance(right, Expr):
            right = self._expr(scope, right)
        return Condition(negated=c.negated, left=left, op=c.op, right=right, right2=c.right2)


@dataclass(frozen=True)
class _Scope:
    env: DatabaseEnv
    tables: tuple[int, ...]
    alias_map: dict
    name_map: dict

    def position_of(self, qualifier: str) -> int:
        low = qualifier.lower()
        if low in self.alias_map:
            return self.alias_map[low]
        if low in self.name_map:
            return self.name_map[low]
        raise ResolutionError(f"{self.env.db_id}: unknown alias or table {qualifier!r}")


def _orient(tables: tuple[int, ...], a: ColumnRef, b: ColumnRef) -> JoinCondition:
    """Store join conditions with the earlier FROM table on the left."""
    pa = tables.index(a.table_index)
    pb = tables.index(b.table_index)
    if (pa, a.column_index) <= (pb, b.column_index):
        return (a, b)
    return (b, a)


def _migrate_join_conditions(q: Query) -> Query:
    """Move cross-table column-equality WHERE conditions into the join list.

    Only fires when every WHERE connector is AND, since pulling a condition
    out of an OR chain would change semantics.
    """
    from_ = q.from_
    assert isinstance(from_, FromClause)
    if len(from_.tables) < 2 or not q.where or any(c != "and" for c in q.where.connectors):
        return q

    kept: list[Condition] = []
    new_joins = [list(group) for group in from_.joins]
    for cond in q.where.conditions:
        if (
            not cond.negated
            and cond.op == "="
            and isinstance(cond.right, Expr)
            and cond.left.agg is None
            and cond.left.arith is None
            and cond.right.agg is None
            and cond.right.arith is None
            and isinstance(cond.left.left, ColumnRef)
            and isinstance(cond.right.left, ColumnRef)
            and cond.left.left.table_index != cond.right.left.table_index
        ):
            a, b = _orient(from_.tables, cond.left.left, cond.right.left)
            later = max(from_.tables.index(a.table_index), from_.tables.index(b.table_index))
            new_joins[later - 1].append((a, b))
        else:
            kept.append(cond)

    if len(kept) == len(q.where.conditions):
        return q
    connectors = ("and",) * max(len(kept) - 1, 0)
    return replace(
        q,
        where=CondList(conditions=tuple(kept), connectors=connectors),
        from_=FromClause(tables=from_.tables, joins=tuple(tuple(g) for g in new_joins)),
    )


def parse_sql(sql: str, env: DatabaseEnv) -> Query:
    """Parse a supported-subset SQL string into an alias-free AST."""
    raw = _Parser(tokenize(sql)).parse()
    return _Resolver(env).resolve_query(raw)


# ---------------------------------------------------------------------------
# Canonical rendering
# ---------------------------------------------------------------------------

def render(ast: Query, env: DatabaseEnv) -> str:
    """Deterministic canonical surface form of a parsed query."""
    return " ".join(_render_tokens(ast, env))


def _render_tokens(q: Query, env: DatabaseEnv) -> list[str]:
    from_ = q.from_
    assert isinstance(from_, FromClause), "render requires a concrete query"
    tables = from_.tables
    multi = len(tables) > 1

    def col_tok(col: ColumnRef) -> str:
        if multi:
            return f"T{tables.index(col.table_index) + 1}.{col.name}"
        return col.name

    def operand_tok(op: Operand) -> str:
        if isinstance(op, Star):
            if op.table is not None and multi:
                return f"T{tables.index(op.table) + 1}.*"
            return "*"
        if isinstance(op, SlotRef):
            return op.name
        return col_tok(op)

    def expr_toks(e: Expr) -> list[str]:
        inner = [operand_tok(e.left)]
        if e.arith:
            inner += [e.arith, operand_tok(e.right)]
        if e.agg:
            head = [e.agg, "("]
            if e.distinct:
                head.append("distinct")
            return head + inner + [")"]
        if e.distinct:
            return ["distinct"] + inner
        return inner

    def literal_tok(lit: Literal) -> str:
        if lit.kind == "string":
            return "'" + lit.text.replace("'", "''") + "'"
        if lit.kind == "number":
            return lit.text
        if lit.kind == "slot":
            return "val"
        return "<val>"

    def cond_toks(c: Condition) -> list[str]:
        out = expr_toks(c.left)
        if c.negated:
            out.append("not")
        out.append(c.op)
        if isinstance(c.right, Query):
            out += ["("] + _render_tokens(c.right, env) + [")"]
        elif isinstance(c.right, Expr):
            out += expr_toks(c.right)
        else:
            out.append(literal_tok(c.right))
        if c.op == "between":
            out += ["and", literal_tok(c.right2)]
        return out

    def cond_list_toks(cl: CondList) -> list[str]:
        out = cond_toks(cl.conditions[0])
        for conn, cond in zip(cl.connectors, cl.conditions[1:]):
            out.append(conn)
            out += cond_toks(cond)
        return out

    tokens = ["select"]
    if q.select_distinct:
        tokens.append("distinct")
    for i, item in enumerate(q.select):
        if i:
            tokens.append(",")
        tokens += expr_toks(item)

    tokens += ["from", env.table_name(tables[0])]
    if multi:
        tokens += ["as", "T1"]
        for pos in range(1, len(tables)):
            tokens += ["join", env.table_name(tables[pos]), "as", f"T{pos + 1}"]
            conds = from_.joins[pos - 1] if pos - 1 < len(from_.joins) else ()
            if conds:
                tokens.append("on")
                for j, (a, b) in enumerate(conds):
                    if j:
                        tokens.append("and")
                    tokens += [col_tok(a), "=", col_tok(b)]

    if q.where:
        tokens.append("where")
        tokens += cond_list_toks(q.where)
    if q.group_by:
        tokens += ["group", "by"]
        for i, g in enumerate(q.group_by):
            if i:
                tokens.append(",")
            tokens.append(operand_tok(g))
    if q.having:
        tokens.append("having")
        tokens += cond_list_toks(q.having)
    if q.order_by:
        tokens += ["order", "by"]
        for i, item in enumerate(q.order_by.items):
            if i:
                tokens.append(",")
            tokens += expr_toks(item)
        if q.order_by.direction == "desc":
            tokens.append("desc")
    if q.limit is not None:
        tokens += ["limit", str(q.limit)]
    if q.set_op:
        tokens.append(q.set_op[0])
        tokens += _render_tokens(q.set_op[1], env)
    return tokens


# ---------------------------------------------------------------------------
# Value stripping (EM normalization)
# ---------------------------------------------------------------------------

def strip_values(ast: Query) -> Query:
    """Replace every literal with a type-erased placeholder; structure kept."""
    placeholder = Literal(text="", kind="placeholder")

    def strip_cond(c: Condition) -> Condition:
        right = c.right
        if isinstance(right, Literal):
            right = placeholder
        elif isinstance(right, Query):
            right = strip_values(right)
        right2 = placeholder if c.right2 is not None else None
        return Condition(negated=c.negated, left=c.left, op=c.op, right=right, right2=right2)

    def strip_list(cl: CondList) -> CondList:
        return CondList(tuple(strip_cond(c) for c in cl.conditions), cl.connectors)

    return replace(
        ast,
        where=strip_list(ast.where),
        having=strip_list(ast.having),
        set_op=(ast.set_op[0], strip_values(ast.set_op[1])) if ast.set_op else None,
    )


# ---------------------------------------------------------------------------
# Coarse templates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoarseTemplate:
    """A SQL skeleton: typed column slots, ``val`` slots, FROM/JOINs removed.

    ``join_arity`` is the number of distinct tables the source query touched
    across all of its scopes; sampling uses it to skip environments with too
    few tables.
    """

    tokens: tuple[str, ...]
    join_arity: int

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass(frozen=True)
class TemplateInfo:
    """Derived template metadata: slots in appearance order plus the parsed
    skeleton used to rebuild concrete queries."""

    skeleton: Query
    column_slots: tuple[SlotRef, ...]
    value_slots: tuple[str | None, ...]  # bound column-slot name, None for count-valued
    table_slots: tuple[str, ...]  # one per scope without any column mention
    scope_slots: tuple[tuple[str, ...], ...]  # slot names mentioned per scope, pre-order


class _Coarsener:
    """Walks a resolved query emitting template tokens; mention roles decide
    slot identity (projection mentions share slots, filter mentions are
    numbered separately)."""

    def __init__(self, env: DatabaseEnv):
        self.env = env
        self.tokens: list[str] = []
        self.slot_by_mention: dict[tuple, str] = {}
        self.type_counts: dict[str, int] = {}
        self.slot_types: dict[str, str] = {}
        self.assignment: dict[str, ColumnRef] = {}
        self.value_slots: list[str | None] = []
        self.values: list[Literal] = []
        self.all_tables: set[int] = set()
        self.scope_tables: list[tuple[set[int], int]] = []  # (mentioned, natural first table)
        self.scope_stack: list[int] = []

    def slot_for(self, col: ColumnRef, role: str) -> str:
        key = (role, col.table_index, col.column_index)
        name = self.slot_by_mention.get(key)
        if name is None:
            stype = "key" if col.is_key else col.logical_type
            index = self.type_counts.get(stype, 0) + 1
            self.type_counts[stype] = index
            name = f"{stype}{index}"
            self.slot_by_mention[key] = name
            self.slot_types[name] = stype
            self.assignment[name] = col
        return name

    def operand(self, op: Operand, role: str) -> str:
        if isinstance(op, Star):
            return "*"
        assert isinstance(op, ColumnRef)
        self.scope_tables[self.scope_stack[-1]][0].add(op.table_index)
        return self.slot_for(op, role)

    def expr(self, e: Expr, role: str) -> None:
        inner = [self.operand(e.left, role)]
        if e.arith:
            inner += [e.arith, self.operand(e.right, role)]
        if e.agg:
            self.tokens.append(e.agg)
            self.tokens.append("(")
            if e.distinct:
                self.tokens.append("distinct")
            self.tokens += inner
            self.tokens.append(")")
        else:
            if e.distinct:
                self.tokens.append("distinct")
            self.tokens += inner

    def expr_bound_slot(self, e: Expr) -> str | None:
        """The column slot a literal in this condition binds to (None when the
        left side has no concrete column, e.g. count(*))."""
        for op in (e.left, e.right):
            if isinstance(op, ColumnRef):
                return self.slot_by_mention.get(("filter", op.table_index, op.column_index))
        return None

    def literal(self, lit: Literal, bound: str | None) -> None:
        self.tokens.append("val")
        self.value_slots.append(bound)
        self.values.append(lit)

    def condition(self, c: Condition) -> None:
        self.expr(c.left, "filter")
        bound = self.expr_bound_slot(c.left)
        if c.negated:
            self.tokens.append("not")
        self.tokens.append(c.op)
        if isinstance(c.right, Query):
            self.tokens.append("(")
            self.query(c.right)
            self.tokens.append(")")
        elif isinstance(c.right, Expr):
            self.expr(c.right, "filter")
        else:
            self.literal(c.right, bound)
        if c.op == "between":
            self.tokens.append("and")
            self.literal(c.right2, bound)

    def cond_list(self, cl: CondList) -> None:
        self.condition(cl.conditions[0])
        for conn, cond in zip(cl.connectors, cl.conditions[1:]):
            self.tokens.append(conn)
            self.condition(cond)

    def query(self, q: Query) -> None:
        from_ = q.from_
        assert isinstance(from_, FromClause)
        self.all_tables.update(from_.tables)
        self.scope_stack.append(len(self.scope_tables))
        self.scope_tables.append((set(), from_.tables[0]))

        self.tokens.append("select")
        if q.select_distinct:
            self.tokens.append("distinct")
        for i, item in enumerate(q.select):
            if i:
                self.tokens.append(",")
            self.expr(item, "proj")
        if q.where:
            self.tokens.append("where")
            self.cond_list(q.where)
        if q.group_by:
            self.tokens += ["group", "by"]
            for i, g in enumerate(q.group_by):
                if i:
                    self.tokens.append(",")
                self.tokens.append(self.operand(g, "proj"))
        if q.having:
            self.tokens.append("having")
            self.cond_list(q.having)
        if q.order_by:
            self.tokens += ["order", "by"]
            for i, item in enumerate(q.order_by.items):
                if i:
                    self.tokens.append(",")
                self.expr(item, "proj")
            if q.order_by.direction == "desc":
                self.tokens.append("desc")
        if q.limit is not None:
            self.tokens += ["limit", str(q.limit)]
        if q.set_op:
            self.tokens.append(q.set_op[0])
            self.query(q.set_op[1])
        self.scope_stack.pop()


def to_coarse(ast: Query, env: DatabaseEnv) -> CoarseTemplate:
    """Convert a resolved query to its coarse template."""
    template, _, _, _ = coarse_bindings(ast, env)
    return template


def coarse_bindings(
    ast: Query, env: DatabaseEnv
) -> tuple[CoarseTemplate, dict[str, ColumnRef], list[Literal], dict[str, int]]:
    """Coarse template plus the query's own slot bindings.

    Returns (template, column assignment, value literals in slot order,
    table choices for column-less scopes). The natural assignment is not
    necessarily injective: a column mentioned both in a projection and in a
    filter occupies two slots.
    """
    walker = _Coarsener(env)
    walker.query(ast)
    template = CoarseTemplate(tokens=tuple(walker.tokens), join_arity=len(walker.all_tables))
    info = template_info(template)
    tables: dict[str, int] = {}
    empty_scopes = [i for i, (mentioned, _) in enumerate(walker.scope_tables) if not mentioned]
    for tab_slot, scope_index in zip(info.table_slots, empty_scopes):
        tables[tab_slot] = walker.scope_tables[scope_index][1]
    return template, dict(walker.assignment), list(walker.values), tables


@lru_cache(maxsize=4096)
def _template_info_cached(tokens: tuple[str, ...]) -> TemplateInfo:
    parser = _Parser(tokenize(" ".join(tokens)), template_mode=True)
    skeleton = parser.parse()

    column_slots: list[SlotRef] = []
    seen: set[str] = set()
    value_slots: list[str | None] = []
    scope_slot_names: list[list[str]] = []  # scopes in pre-order

    def walk_operand(op: Operand, scope_id: int) -> None:
        if isinstance(op, SlotRef):
            if op.name not in scope_slot_names[scope_id]:
                scope_slot_names[scope_id].append(op.name)
            if op.name not in seen:
                seen.add(op.name)
                column_slots.append(op)

    def walk_expr(e: Expr, scope_id: int) -> None:
        walk_operand(e.left, scope_id)
        if e.right is not None:
            walk_operand(e.right, scope_id)

    def first_slot(e: Expr) -> str | None:
        for op in (e.left, e.right):
            if isinstance(op, SlotRef):
                return op.name
        return None

    def walk_conditions(cl: CondList, scope_id: int) -> None:
        for cond in cl.conditions:
            walk_expr(cond.left, scope_id)
            bound = first_slot(cond.left)
            if isinstance(cond.right, Query):
                walk_scope(cond.right)
            elif isinstance(cond.right, Expr):
                walk_expr(cond.right, scope_id)
            elif cond.right.kind == "slot":
                value_slots.append(bound)
            if cond.right2 is not None and cond.right2.kind == "slot":
                value_slots.append(bound)

    def walk_scope(q: Query) -> None:
        scope_id = len(scope_slot_names)
        scope_slot_names.append([])
        for item in q.select:
            walk_expr(item, scope_id)
        walk_conditions(q.where, scope_id)
        for g in q.group_by:
            walk_operand(g, scope_id)
        walk_conditions(q.having, scope_id)
        if q.order_by:
            for item in q.order_by.items:
                walk_expr(item, scope_id)
        if q.set_op:
            walk_scope(q.set_op[1])

    walk_scope(skeleton)
    table_slots = tuple(
        f"tab{i + 1}" for i, _ in enumerate(s for s in scope_slot_names if not s)
    )
    return TemplateInfo(
        skeleton=skeleton,
        column_slots=tuple(column_slots),
        value_slots=tuple(value_slots),
        table_slots=tuple(table_slots),
        scope_slots=tuple(tuple(names) for names in scope_slot_names),
    )


def template_info(template: CoarseTemplate) -> TemplateInfo:
    return _template_info_cached(template.tokens)


def template_from_text(text: str, join_arity: int) -> CoarseTemplate:
    """Rebuild a template from its canonical token string (validates it)."""
    template = CoarseTemplate(tokens=tuple(text.split(" ")), join_arity=join_arity)
    template_info(template)
    return template


# ---------------------------------------------------------------------------
# Template -> concrete query
# ---------------------------------------------------------------------------

def literal_for(value, logical_type: str) -> Literal:
    """Type a raw Python value as a literal per the bound column's logical type:
    numbers unquoted, everything else quoted."""
    if isinstance(value, bool):
        return Literal(text=str(int(value)), kind="number")
    if isinstance(value, int):
        return Literal(text=str(value), kind="number")
    if isinstance(value, float):
        return Literal(text=repr(value), kind="number")
    if logical_type == "number":
        text = str(value)
        try:
            float(text)
            return Literal(text=text, kind="number")
        except ValueError:
            pass
    return Literal(text=str(value), kind="string")


def from_coarse(
    template: CoarseTemplate,
    assignment: dict[str, ColumnRef],
    values: Iterable,
    env: DatabaseEnv,
    tables: dict[str, int] | None = None,
) -> Query:
    """Instantiate a template: substitute columns and values, then rebuild
    FROM clauses and join conditions along foreign-key paths.

    ``assignment`` must cover every column slot injectively and
    type-compatibly. ``values`` covers the value slots in appearance order
    (a mapping keyed by slot index is also accepted). ``tables`` picks the
    table for scopes that mention no column at all.
    """
    info = template_info(template)
    tables = tables or {}

    needed = {s.name for s in info.column_slots}
    missing = needed - set(assignment)
    if missing:
        raise AssignmentError(f"assignment missing slots: {sorted(missing)}")
    used: dict[tuple[int, int], str] = {}
    for slot in info.column_slots:
        col = assignment[slot.name]
        key = (col.table_index, col.column_index)
        if key in used:
            raise AssignmentError(
                f"slots {used[key]} and {slot.name} both map to column {col.name}"
            )
        used[key] = slot.name
        if slot.stype == "key":
            if not col.is_key:
                raise AssignmentError(f"slot {slot.name} needs a key column, got {col.name}")
        elif col.is_key or col.logical_type != slot.stype:
            raise AssignmentError(
                f"slot {slot.name} needs a non-key {slot.stype} column, got {col.name}"
            )

    if isinstance(values, dict):
        value_list = [values[i] for i in range(len(info.value_slots))]
    else:
        value_list = list(values)
    if len(value_list) != len(info.value_slots):
        raise AssignmentError(
            f"expected {len(info.value_slots)} values, got {len(value_list)}"
        )

    literals: list[Literal] = []
    for value, bound in zip(value_list, info.value_slots):
        if isinstance(value, Literal):
            literals.append(value)
        else:
            ltype = assignment[bound].logical_type if bound else "number"
            literals.append(literal_for(value, ltype))

    state = {"value_index": 0, "tab_index": 0}

    def sub_operand(op: Operand) -> Operand:
        if isinstance(op, SlotRef):
            return assignment[op.name]
        return op

    def sub_expr(e: Expr) -> Expr:
        return Expr(
            agg=e.agg,
            distinct=e.distinct,
            left=sub_operand(e.left),
            arith=e.arith,
            right=sub_operand(e.right) if e.right is not None else None,
        )

    def next_literal() -> Literal:
        lit = literals[state["value_index"]]
        state["value_index"] += 1
        return lit

    def sub_condition(c: Condition) -> Condition:
        left = sub_expr(c.left)
        right = c.right
        if isinstance(right, Query):
            right = build_scope(right)
        elif isinstance(right, Expr):
            right = sub_expr(right)
        elif right.kind == "slot":
            right = next_literal()
        right2 = c.right2
        if right2 is not None and right2.kind == "slot":
            right2 = next_literal()
        return Condition(negated=c.negated, left=left, op=c.op, right=right, right2=right2)

    def sub_cond_list(cl: CondList) -> CondList:
        return CondList(tuple(sub_condition(c) for c in cl.conditions), cl.connectors)

    def collect_tables(q: Query) -> list[int]:
        """Tables mentioned by this scope's own columns, appearance order."""
        order: list[int] = []

        def note(op: Operand) -> None:
            if isinstance(op, SlotRef):
                t = assignment[op.name].table_index
                if t not in order:
                    order.append(t)

        def note_expr(e: Expr) -> None:
            note(e.left)
            if e.right is not None:
                note(e.right)

        for item in q.select:
            note_expr(item)
        for cl in (q.where, q.having):
            for cond in cl.conditions:
                note_expr(cond.left)
                if isinstance(cond.right, Expr):
                    note_expr(cond.right)
        for g in q.group_by:
            note(g)
        if q.order_by:
            for item in q.order_by.items:
                note_expr(item)
        return order

    def build_scope(q: Query) -> Query:
        scope_tables = collect_tables(q)
        if not scope_tables:
            slot_name = info.table_slots[state["tab_index"]]
            state["tab_index"] += 1
            if slot_name not in tables:
                raise AssignmentError(f"scope has no columns; table choice {slot_name} required")
            scope_tables = [tables[slot_name]]
        order, conds = join_tree(env, scope_tables, start=scope_tables[0])
        from_ = FromClause(
            tables=tuple(order),
            joins=tuple((c,) for c in conds),
        )
        built = Query(
            select=tuple(sub_expr(e) for e in q.select),
            select_distinct=q.select_distinct,
            from_=from_,
            where=sub_cond_list(q.where),
            group_by=tuple(sub_operand(g) for g in q.group_by),
            having=sub_cond_list(q.having),
            order_by=(
                OrderBy(tuple(sub_expr(e) for e in q.order_by.items), q.order_by.direction)
                if q.order_by
                else None
            ),
            limit=q.limit,
            set_op=None,
        )
        if q.set_op:
            built = replace(built, set_op=(q.set_op[0], build_scope(q.set_op[1])))
        return built

    result = build_scope(info.skeleton)
    return _reorient(result)


def _reorient(q: Query) -> Query:
    """Normalize join-condition orientation after a rebuild."""
    from_ = q.from_
    assert isinstance(from_, FromClause)
    joins = tuple(
        tuple(_orient(from_.tables, a, b) for a, b in group) for group in from_.joins
    )

    def fix_cond(c: Condition) -> Condition:
        if isinstance(c.right, Query):
            return replace(c, right=_reorient(c.right))
        return c

    def fix_list(cl: CondList) -> CondList:
        return CondList(tuple(fix_cond(c) for c in cl.conditions), cl.connectors)

    return replace(
        q,
        from_=FromClause(tables=from_.tables, joins=joins),
        where=fix_list(q.where),
        having=fix_list(q.having),
        set_op=(q.set_op[0], _reorient(q.set_op[1])) if q.set_op else None,
    )


def template_slot_counts(template: CoarseTemplate) -> dict[str, int]:
    """Distinct column slots per type, e.g. {"key": 1, "text": 2}."""
    counts: dict[str, int] = {}
    for slot in template_info(template).column_slots:
        counts[slot.stype] = counts.get(slot.stype, 0) + 1
    return counts


def has_top_level_order_by(sql: str) -> bool:
    """Detect a top-level ORDER BY in a raw SQL string without parsing it
    fully (string literals and parenthesized subqueries are skipped)."""
    depth = 0
    i = 0
    lowered = sql.lower()
    n = len(lowered)
    while i < n:
        ch = lowered[i]
        if ch == "'":
            i += 1
            while i < n:
                if lowered[i] == "'":
                    if i + 1 < n and lowered[i + 1] == "'":
                        i += 2
                        continue
                    break
                i += 1
        elif ch == "(":
            depth += 1
        elif ch == ")":
            depth = max(depth - 1, 0)
        elif depth == 0 and lowered.startswith("order", i):
            before_ok = i == 0 or not (lowered[i - 1].isalnum() or lowered[i - 1] == "_")
            rest = lowered[i + 5 :].lstrip()
            if before_ok and rest.startswith("by"):
                return True
        i += 1
    return False
