"""HTTP facade over the pipeline and knowledge base.

Endpoints (JSON unless noted; every request carries
``Authorization: Bearer <token>``):

    POST /events                     JSON Lines or XML batch ingest
    GET  /verdicts?after=&wait=      cursor feed, optional long-poll
    GET  /verdicts/stream?after=     server-sent events feed
    GET  /unknowns                   triage queue
    POST /unknowns/{id}/benign       analyst mark-benign
    GET  /approvals                  pending dispatch records
    POST /approvals/{id}             {"decision": approve|deny, "approver": ...}
    POST /query                      basic-graph-pattern query
    GET  /kb/describe?id=            entity view
    GET  /kb/neighborhood?id=&depth= pivot subgraph
    GET  /stats                      counters

Errors are ``{"error": {"code", "message"}}``.  A static directory can be
mounted at /ui/ for the analyst console; everything else is token-gated
because threat intelligence is sensitive.
"""

from __future__ import annotations

import json
import logging
import mimetypes
import re
import threading
import time
import urllib.parse
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional

from . import coa, query
from .kb import Lit, UnknownEntityError
from .pipeline import Pipeline, SubjectStateError, UnknownSubjectError

log = logging.getLogger("sentinel.service")

SYNC_INGEST_LIMIT = 1000
LONG_POLL_CAP_S = 25.0


def triple_to_dict(triple) -> dict:
    literal = isinstance(triple.object, Lit)
    return {
        "subject": triple.subject,
        "predicate": triple.predicate,
        "object": triple.object.value if literal else triple.object,
        "literal": literal,
    }


class ThreatService:
    """Owns the HTTP server; all state lives in the pipeline."""

    def __init__(self, pipeline: Pipeline, token: str,
                 host: str = "127.0.0.1", port: int = 0,
                 ui_dir: Optional[str] = None):
        self.pipeline = pipeline
        self.token = token
        self.ui_dir = Path(ui_dir) if ui_dir else None
        self._server = ThreadingHTTPServer((host, port), _Handler)
        self._server.daemon_threads = True
        self._server.service = self  # type: ignore[attr-defined]
        self._thread: Optional[threading.Thread] = None
        self.closing = False

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    def start(self) -> None:
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        name="sentinel-http", daemon=True)
        self._thread.start()
        log.info("listening on %s:%d", *self.address)

    def stop(self) -> None:
        self.closing = True
        self._server.shutdown()
        self._server.server_close()
        if self._thread:
            self._thread.join(timeout=5)


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    @property
    def service(self) -> ThreatService:
        return self.server.service  # type: ignore[attr-defined]

    @property
    def pipeline(self) -> Pipeline:
        return self.service.pipeline

    def log_message(self, fmt, *args):
        log.debug("%s %s", self.address_string(), fmt % args)

    # -- plumbing -------------------------------------------------------------

    def _send_json(self, status: int, obj, *, close: bool = False) -> None:
        body = json.dumps(obj).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        if close:
            self.send_header("Connection", "close")
        self.end_headers()
        self.wfile.write(body)

    def _error(self, status: int, code: str, message: str) -> None:
        self._send_json(status, {"error": {"code": code, "message": message}})

    def _authorized(self) -> bool:
        header = self.headers.get("Authorization", "")
        if header == f"Bearer {self.service.token}":
            return True
        self._error(401, "unauthenticated", "missing or invalid bearer token")
        return False

    def _read_body(self) -> bytes:
        length = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(length) if length else b""

    def _json_body(self) -> Optional[dict]:
        raw = self._read_body()
        if not raw:
            return {}
        try:
            return json.loads(raw.decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            self._error(400, "bad-request", f"invalid JSON body: {exc}")
            return None

    def _query_params(self) -> dict[str, str]:
        parsed = urllib.parse.urlparse(self.path)
        return {k: v[0] for k, v in urllib.parse.parse_qs(parsed.query).items()}

    # -- dispatch ----------------------------------------------------------------

    def do_GET(self) -> None:  # noqa: N802 (stdlib handler naming)
        path = urllib.parse.urlparse(self.path).path
        try:
            if path == "/" or path.startswith("/ui"):
                self._serve_static(path)
                return
            if not self._authorized():
                return
            if path == "/verdicts":
                self._get_verdicts()
            elif path == "/verdicts/stream":
                self._stream_verdicts()
            elif path == "/unknowns":
                self._send_json(200, {"unknowns": self.pipeline.unknown_subjects()})
            elif path == "/approvals":
                records = [r.to_dict() for r in self.pipeline.dispatcher.pending()]
                self._send_json(200, {"approvals": records})
            elif path == "/kb/describe":
                self._describe()
            elif path == "/kb/neighborhood":
                self._neighborhood()
            elif path == "/stats":
                self._send_json(200, self.pipeline.stats())
            else:
                self._error(404, "not-found", path)
        except BrokenPipeError:
            pass
        except Exception as exc:  # pragma: no cover - defensive
            log.exception("GET %s failed", path)
            try:
                self._error(500, "internal", str(exc))
            except Exception:
                pass

    def do_POST(self) -> None:  # noqa: N802
        path = urllib.parse.urlparse(self.path).path
        try:
            if not self._authorized():
                return
            benign = re.fullmatch(r"/unknowns/(.+)/benign", path)
            approval = re.fullmatch(r"/approvals/([^/]+)", path)
            if path == "/events":
                self._post_events()
            elif path == "/query":
                self._post_query()
            elif benign:
                self._post_benign(urllib.parse.unquote(benign.group(1)))
            elif approval:
                self._post_approval(urllib.parse.unquote(approval.group(1)))
            else:
                self._error(404, "not-found", path)
        except BrokenPipeError:
            pass
        except Exception as exc:  # pragma: no cover - defensive
            log.exception("POST %s failed", path)
            try:
                self._error(500, "internal", str(exc))
            except Exception:
                pass

    # -- handlers -------------------------------------------------------------------

    def _post_events(self) -> None:
        raw = self._read_body()
        if not raw:
            self._error(400, "bad-request", "empty body")
            return
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError:
            self._error(400, "bad-request", "body is not UTF-8")
            return
        content_type = (self.headers.get("Content-Type") or "").split(";")[0].strip().lower()
        is_xml = content_type in ("application/xml", "text/xml") or text.lstrip().startswith("<")

        if is_xml:
            size = text.count("<Event")
        else:
            size = sum(1 for line in text.splitlines() if line.strip())
        if size > SYNC_INGEST_LIMIT:
            worker = threading.Thread(
                target=self.pipeline.ingest_xml if is_xml else self.pipeline.ingest_jsonl,
                args=(text,), daemon=True)
            worker.start()
            self._send_json(202, {"queued": size})
            return
        try:
            counts = self.pipeline.ingest_xml(text) if is_xml else self.pipeline.ingest_jsonl(text)
        except Exception as exc:
            self._error(400, "bad-request", f"unparseable body: {exc}")
            return
        self._send_json(200, counts)

    def _get_verdicts(self) -> None:
        params = self._query_params()
        try:
            after = int(params.get("after", 0))
            wait = min(float(params.get("wait", 0)), LONG_POLL_CAP_S)
        except ValueError:
            self._error(400, "bad-request", "after/wait must be numeric")
            return
        records = self.pipeline.verdicts_after(after, wait_s=wait)
        cursor = records[-1].cursor if records else after
        self._send_json(200, {"verdicts": [r.to_dict() for r in records], "cursor": cursor})

    def _stream_verdicts(self) -> None:
        params = self._query_params()
        last_header = self.headers.get("Last-Event-ID")
        try:
            cursor = int(params.get("after", last_header or 0))
        except ValueError:
            cursor = 0
        self.send_response(200)
        self.send_header("Content-Type", "text/event-stream")
        self.send_header("Cache-Control", "no-cache")
        self.send_header("Connection", "close")
        self.end_headers()
        last_beat = time.monotonic()
        while not self.service.closing:
            records = self.pipeline.verdicts_after(cursor, wait_s=1.0)
            try:
                for record in records:
                    payload = json.dumps(record.to_dict())
                    self.wfile.write(f"id: {record.cursor}\ndata: {payload}\n\n".encode("utf-8"))
                    cursor = record.cursor
                if records:
                    self.wfile.flush()
                elif time.monotonic() - last_beat > 10:
                    self.wfile.write(b": keep-alive\n\n")
                    self.wfile.flush()
                    last_beat = time.monotonic()
            except (BrokenPipeError, ConnectionResetError, OSError):
                return

    def _post_query(self) -> None:
        body = self._json_body()
        if body is None:
            return
        try:
            parsed = query.parse_query(body)
            rows = self.pipeline.tier.execute(parsed)
        except query.QueryError as exc:
            self._error(400, "bad-query", str(exc))
            return
        self._send_json(200, {"bindings": rows})

    def _post_benign(self, subject_ref: str) -> None:
        body = self._json_body()
        if body is None:
            return
        annotator = str(body.get("annotator") or "")
        if not annotator:
            self._error(400, "bad-request", "annotator is required")
            return
        try:
            verdict, admission = self.pipeline.mark_benign(subject_ref, annotator)
        except UnknownSubjectError as exc:
            self._error(404, "not-found", f"unknown subject: {exc}")
            return
        except SubjectStateError as exc:
            self._error(409, "conflict", str(exc))
            return
        if not admission.ok:
            self._send_json(409, {"error": {
                "code": admission.reason, "message": admission.detail or admission.reason}})
            return
        self._send_json(200, {
            "subject": subject_ref,
            "level": verdict.level.value,
            "fired_rules": verdict.fired_rules,
            "annotator": annotator,
        })

    def _post_approval(self, record_id: str) -> None:
        body = self._json_body()
        if body is None:
            return
        decision = str(body.get("decision") or "")
        approver = str(body.get("approver") or "")
        if decision not in ("approve", "deny") or not approver:
            self._error(400, "bad-request", "need decision=approve|deny and approver")
            return
        try:
            record = self.pipeline.approve(record_id, decision, approver)
        except coa.UnknownRecordError:
            self._error(404, "not-found", f"unknown record: {record_id}")
            return
        except coa.TerminalRecordError as exc:
            self._error(409, "conflict", str(exc))
            return
        self._send_json(200, record.to_dict())

    def _describe(self) -> None:
        entity_id = self._query_params().get("id", "")
        try:
            view = self.pipeline.kb.describe(entity_id)
        except UnknownEntityError:
            self._error(404, "not-found", f"unknown entity: {entity_id}")
            return
        self._send_json(200, view)

    def _neighborhood(self) -> None:
        params = self._query_params()
        entity_id = params.get("id", "")
        try:
            depth = int(params.get("depth", 1))
        except ValueError:
            self._error(400, "bad-request", "depth must be an integer")
            return
        if depth < 0:
            self._error(400, "bad-request", "depth must be >= 0")
            return
        try:
            triples = self.pipeline.kb.neighborhood(entity_id, depth)
        except UnknownEntityError:
            self._error(404, "not-found", f"unknown entity: {entity_id}")
            return
        self._send_json(200, {"triples": [triple_to_dict(t) for t in triples]})

    def _serve_static(self, path: str) -> None:
        ui_dir = self.service.ui_dir
        if ui_dir is None:
            self._error(404, "not-found", "no UI mounted")
            return
        if path in ("/", "/ui", "/ui/"):
            relative = "index.html"
        else:
            relative = path[len("/ui/"):]
        target = (ui_dir / relative).resolve()
        if not str(target).startswith(str(ui_dir.resolve())) or not target.is_file():
            self._error(404, "not-found", path)
            return
        body = target.read_bytes()
        content_type = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        self.send_response(200)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)
