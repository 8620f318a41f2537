"""Model adapters: the protocol boundary where parser F and generator G
plug into the pipeline, plus deterministic built-in baselines.

Adapters speak newline-delimited JSON over stdin/stdout. On startup the
adapter emits a handshake line {"protocol": "gazp-adapter/1", "concurrent":
bool}; afterwards each request line {"id": int, "method": "generate" |
"parse", "params": {...}} receives exactly one response line {"id": int,
"result": {...}} or {"id": int, "error": str}. Requests to adapters that
do not advertise concurrency are serialized.

Built-in baselines run in-process and need no subprocess:
  perfect    rule-based generator whose paired parser inverts it exactly
  corrupting same generator; the parser perturbs one literal half the time
  lossy      generator drops the WHERE clause, so round trips rarely agree
"""

from __future__ import annotations

import json
import queue
import subprocess
import threading
from dataclasses import dataclass, replace

from . import canon, codec
from .canon import Condition, CondList, Literal, Query, parse_sql, render
from .errors import (
    AdapterError,
    InvalidPredictionError,
    ProtocolError,
    SqlsynthError,
)
from .schema import DatabaseEnv, env_to_schema_entry
from .workers import derive_rng

PROTOCOL_NAME = "gazp-adapter/1"
DEFAULT_REQUEST_TIMEOUT = 30.0


@dataclass(frozen=True)
class TurnContext:
    """Rendering convention for feeding multi-turn context to flat-input
    models: previous query and current utterance in one string."""

    utterance: str
    prev_query: str | None = None

    @property
    def rendered_input(self) -> str:
        if self.prev_query is None:
            return self.utterance
        return f"[PREV] {self.prev_query} [UTT] {self.utterance}"


# ---------------------------------------------------------------------------
# Built-in baselines
# ---------------------------------------------------------------------------

class PerfectAdapter:
    """Template-rendered utterances with an exact inverse parser."""

    name = "perfect"

    def generate(self, query: str, env: DatabaseEnv, prev_query: str | None = None,
                 request_id: int | None = None) -> str:
        return codec.encode_query(query)

    def parse(self, utterance: str, env: DatabaseEnv, prev_query: str | None = None,
              request_id: int | None = None) -> str:
        return codec.decode_utterance(utterance, [t.name for t in env.tables])


def _literal_count(ast: Query) -> int:
    count = 0

    def walk_conds(cl: CondList):
        nonlocal count
        for cond in cl.conditions:
            if isinstance(cond.right, Literal):
                count += 1
            elif isinstance(cond.right, Query):
                walk(cond.right)
            if cond.right2 is not None:
                count += 1

    def walk(q: Query):
        walk_conds(q.where)
        walk_conds(q.having)
        if q.set_op:
            walk(q.set_op[1])

    walk(ast)
    return count


def _perturb_literal(lit: Literal) -> Literal:
    if lit.kind == "number":
        text = lit.text
        if "." in text:
            return Literal(text=repr(float(text) + 1.0), kind="number")
        return Literal(text=str(int(text) + 1), kind="number")
    if len(lit.text) > 1:
        return Literal(text=lit.text[:-1], kind=lit.kind)
    return Literal(text=lit.text + "x", kind=lit.kind)


def _replace_nth_literal(ast: Query, target: int) -> Query:
    state = {"i": 0}

    def maybe(lit: Literal) -> Literal:
        value = _perturb_literal(lit) if state["i"] == target else lit
        state["i"] += 1
        return value

    def walk_cond(cond: Condition) -> Condition:
        right = cond.right
        if isinstance(right, Literal):
            right = maybe(right)
        elif isinstance(right, Query):
            right = walk(right)
        right2 = maybe(cond.right2) if cond.right2 is not None else None
        return replace(cond, right=right, right2=right2)

    def walk_list(cl: CondList) -> CondList:
        return CondList(tuple(walk_cond(c) for c in cl.conditions), cl.connectors)

    def walk(q: Query) -> Query:
        return replace(
            q,
            where=walk_list(q.where),
            having=walk_list(q.having),
            set_op=(q.set_op[0], walk(q.set_op[1])) if q.set_op else None,
        )

    return walk(ast)


class CorruptingAdapter(PerfectAdapter):
    """Parses correctly, then perturbs one literal with probability 0.5.
    Randomness derives from (seed, request id), so runs are reproducible and
    independent of scheduling."""

    name = "corrupting"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def parse(self, utterance: str, env: DatabaseEnv, prev_query: str | None = None,
              request_id: int | None = None) -> str:
        sql = super().parse(utterance, env, prev_query)
        key = request_id if request_id is not None else utterance
        rng = derive_rng(self.seed, "corrupt", key)
        if rng.random() >= 0.5:
            return sql
        try:
            ast = parse_sql(sql, env)
        except SqlsynthError:
            return sql
        n = _literal_count(ast)
        if n == 0:
            return sql
        return render(_replace_nth_literal(ast, rng.randrange(n)), env)


class LossyAdapter(PerfectAdapter):
    """Generator forgets the WHERE clause; the parser can only return the
    underspecified query, so most round trips are inconsistent."""

    name = "lossy"

    def generate(self, query: str, env: DatabaseEnv, prev_query: str | None = None,
                 request_id: int | None = None) -> str:
        try:
            ast = parse_sql(query, env)
        except SqlsynthError:
            return codec.encode_query(query)
        stripped = replace(ast, where=CondList())
        return codec.encode_query(render(stripped, env))


def builtin_baselines(seed: int = 0) -> dict:
    return {
        "perfect": PerfectAdapter(),
        "corrupting": CorruptingAdapter(seed),
        "lossy": LossyAdapter(),
    }


def resolve_adapter(spec: str, seed: int = 0, timeout: float = DEFAULT_REQUEST_TIMEOUT):
    """Build an adapter from a CLI spec: builtin:<name> or cmd:<shell command>."""
    if spec.startswith("builtin:"):
        name = spec.split(":", 1)[1]
        baselines = builtin_baselines(seed)
        if name not in baselines:
            raise AdapterError(f"unknown builtin adapter {name!r}")
        return baselines[name]
    if spec.startswith("cmd:"):
        return SubprocessAdapter(spec.split(":", 1)[1], timeout=timeout)
    raise AdapterError(f"adapter spec must start with builtin: or cmd: (got {spec!r})")


# ---------------------------------------------------------------------------
# Subprocess adapters
# ---------------------------------------------------------------------------

class SubprocessAdapter:
    """Client for an adapter subprocess speaking the JSON-lines protocol."""

    name = "subprocess"

    def __init__(self, command: str, timeout: float = DEFAULT_REQUEST_TIMEOUT):
        self.command = command
        self.timeout = timeout
        try:
            self.proc = subprocess.Popen(
                command,
                shell=True,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise AdapterError(f"cannot spawn adapter {command!r}: {exc}") from exc
        self._lines: queue.Queue = queue.Queue()
        self._pending: dict[int, dict] = {}
        self._lock = threading.Lock()
        self._next_id = 0
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self.concurrent = self._handshake()

    def _pump(self):
        assert self.proc.stdout is not None
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _next_line(self, timeout: float):
        try:
            line = self._lines.get(timeout=timeout)
        except queue.Empty:
            raise AdapterError(f"adapter {self.command!r}: no response within {timeout}s")
        if line is None:
            raise AdapterError(f"adapter {self.command!r}: process closed its output")
        return line

    def _handshake(self) -> bool:
        line = self._next_line(self.timeout)
        try:
            hello = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"bad handshake line {line!r}") from exc
        if hello.get("protocol") != PROTOCOL_NAME:
            raise ProtocolError(f"expected protocol {PROTOCOL_NAME!r}, got {hello!r}")
        return bool(hello.get("concurrent", False))

    def _call(self, method: str, params: dict, request_id: int | None = None) -> dict:
        with self._lock:
            if request_id is None:
                request_id = self._next_id
            self._next_id = max(self._next_id, request_id) + 1
            line = json.dumps({"id": request_id, "method": method, "params": params})
            try:
                assert self.proc.stdin is not None
                self.proc.stdin.write(line + "\n")
                self.proc.stdin.flush()
            except (BrokenPipeError, ValueError) as exc:
                raise AdapterError(f"adapter {self.command!r} is gone: {exc}") from exc
            while True:
                if request_id in self._pending:
                    response = self._pending.pop(request_id)
                    break
                raw = self._next_line(self.timeout)
                try:
                    message = json.loads(raw)
                except json.JSONDecodeError:
                    raise ProtocolError(f"adapter sent non-JSON line {raw!r}")
                if "id" not in message:
                    raise ProtocolError(f"adapter response without id: {message!r}")
                if message["id"] == request_id:
                    response = message
                    break
                self._pending[message["id"]] = message
        if "error" in response:
            raise AdapterError(f"adapter error: {response['error']}")
        if "result" not in response:
            raise ProtocolError(f"adapter response without result: {response!r}")
        return response["result"]

    def generate(self, query: str, env: DatabaseEnv, prev_query: str | None = None,
                 request_id: int | None = None) -> str:
        params = {"query": query, "db_id": env.db_id, "schema": env_to_schema_entry(env)}
        if prev_query is not None:
            params["prev_query"] = prev_query
        result = self._call("generate", params, request_id)
        utterance = result.get("utterance")
        if not isinstance(utterance, str) or not utterance:
            raise ProtocolError(f"generate returned no utterance: {result!r}")
        return utterance

    def parse(self, utterance: str, env: DatabaseEnv, prev_query: str | None = None,
              request_id: int | None = None) -> str:
        params = {"utterance": utterance, "db_id": env.db_id, "schema": env_to_schema_entry(env)}
        if prev_query is not None:
            params["prev_query"] = prev_query
        result = self._call("parse", params, request_id)
        sql = result.get("query")
        if not isinstance(sql, str):
            raise ProtocolError(f"parse returned no query: {result!r}")
        return sql

    def close(self):
        try:
            if self.proc.stdin:
                self.proc.stdin.close()
            self.proc.terminate()
            self.proc.wait(timeout=5)
        except Exception:
            self.proc.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# ---------------------------------------------------------------------------
# Pipeline-facing operations
# ---------------------------------------------------------------------------

def generate_utterance(model, q: Query, env: DatabaseEnv, prev: Query | None = None,
                       request_id: int | None = None) -> str:
    """Ask the generator for an utterance describing query q."""
    prev_sql = render(prev, env) if prev is not None else None
    utterance = model.generate(render(q, env), env, prev_sql, request_id=request_id)
    if not isinstance(utterance, str) or not utterance:
        raise ProtocolError("generator returned an empty utterance")
    return utterance


def parse_utterance(model, utterance: str, env: DatabaseEnv, prev: Query | None = None,
                    request_id: int | None = None) -> Query:
    """Ask the parser for SQL and validate it against the environment."""
    prev_sql = render(prev, env) if prev is not None else None
    sql = model.parse(utterance, env, prev_sql, request_id=request_id)
    try:
        return parse_sql(sql, env)
    except SqlsynthError as exc:
        raise InvalidPredictionError(f"adapter SQL does not parse: {sql!r} ({exc})") from exc


# ---------------------------------------------------------------------------
# Protocol conformance suite
# ---------------------------------------------------------------------------

def run_conformance(command: str, env: DatabaseEnv, timeout: float = DEFAULT_REQUEST_TIMEOUT) -> list[str]:
    """Spawn an adapter command and exercise the wire protocol. Returns the
    list of passed check names; raises AdapterError/ProtocolError on the
    first violation."""
    passed: list[str] = []
    with SubprocessAdapter(command, timeout=timeout) as adapter:
        passed.append("handshake")

        sql = "select count ( * ) from " + env.tables[0].name
        utterance = adapter.generate(sql, env, request_id=101)
        passed.append("generate-responds")

        round_tripped = adapter.parse(utterance, env, request_id=102)
        if not round_tripped:
            raise ProtocolError("parse returned an empty query")
        passed.append("parse-responds")

        try:
            adapter._call("frobnicate", {}, request_id=103)
        except AdapterError:
            passed.append("unknown-method-errors")
        else:
            raise ProtocolError("adapter accepted an unknown method")

        # One response per request id, even when requests interleave.
        for i, request_id in enumerate((201, 202, 203)):
            result = adapter._call(
                "generate",
                {"query": sql, "db_id": env.db_id, "schema": env_to_schema_entry(env)},
                request_id=request_id,
            )
            if not result.get("utterance"):
                raise ProtocolError(f"request {request_id} got no utterance")
        if adapter._pending:
            raise ProtocolError(f"unmatched responses left over: {sorted(adapter._pending)}")
        passed.append("id-matching")
    return passed
