"""JSON-lines server loop for the gazp-adapter/1 protocol.

Emits the handshake as its first line, then answers one response per
request line. Serial request handling, advertised via concurrent=false.
Malformed lines without a recoverable id are logged to stderr and
skipped; everything else gets a response, error or result.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field

from . import model

PROTOCOL = "gazp-adapter/1"


@dataclass
class AdapterSession:
    handshake_sent: bool = False
    request_log: list[tuple[int, str]] = field(default_factory=list)

    def handshake(self) -> dict:
        self.handshake_sent = True
        return {"protocol": PROTOCOL, "concurrent": False}

    def handle(self, request: dict) -> dict:
        request_id = request.get("id")
        method = request.get("method")
        params = request.get("params") or {}
        self.request_log.append((request_id, str(method)))
        if method == "generate":
            query = params.get("query")
            if not isinstance(query, str) or not query:
                return {"id": request_id, "error": "missing query"}
            utterance = model.generate(query, params.get("schema") or {}, params.get("prev_query"))
            return {"id": request_id, "result": {"utterance": utterance}}
        if method == "parse":
            utterance = params.get("utterance")
            if not isinstance(utterance, str) or not utterance:
                return {"id": request_id, "error": "missing utterance"}
            query = model.parse(utterance, params.get("schema") or {}, params.get("prev_query"))
            return {"id": request_id, "result": {"query": query}}
        return {"id": request_id, "error": "unknown method"}


def serve(stdin=None, stdout=None) -> int:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    session = AdapterSession()
    print(json.dumps(session.handshake()), file=stdout, flush=True)
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError:
            print(f"pyadapter: skipping malformed line: {line[:80]!r}", file=sys.stderr)
            continue
        if not isinstance(request, dict):
            print(f"pyadapter: skipping non-object request: {line[:80]!r}", file=sys.stderr)
            continue
        print(json.dumps(session.handle(request)), file=stdout, flush=True)
    return 0


def main() -> int:
    return serve()


if __name__ == "__main__":
    sys.exit(main())
