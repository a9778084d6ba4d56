"""Bundle-based exchange between playbook stores, plus a small HTTP surface.

Merging is last-writer-wins on the modified timestamp; an exact-version
content conflict keeps the local copy and is counted, never silently
overwritten. Exporting ships the full history chain of every matching id so
receivers can reconstruct lineage. Two stores that exchange bundles in both
directions end up with identical head sets.
"""

from __future__ import annotations

import json
import logging
import threading
import uuid
from collections.abc import Mapping
from dataclasses import dataclass
from datetime import datetime
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from . import model
from .errors import (
    BindFailure,
    ConflictingContent,
    InvalidEnvelope,
    MalformedBundle,
    MalformedEnvelope,
    MalformedTimestamp,
    NotFound,
)
from .model import Clock, PlaybookEnvelope, UuidSource
from .store import ORIGIN_LOCAL, PlaybookStore, QueryFilter, StoreRecord
from .store import (
    PUT_DUPLICATE,
    PUT_INSERTED,
    PUT_NEW_VERSION,
    PUT_STALE_IGNORED,
)

logger = logging.getLogger(__name__)

EXPORT_ALL = QueryFilter(include_revoked=True)


@dataclass(frozen=True)
class SyncBundle:
    bundle_id: str
    produced_at: datetime
    producer: str
    records: tuple[PlaybookEnvelope, ...]

    def to_dict(self) -> dict:
        return {
            "bundle_id": self.bundle_id,
            "produced_at": model.format_timestamp(self.produced_at),
            "producer": self.producer,
            "records": [env.to_dict() for env in self.records],
        }

    def to_json(self, pretty: bool = False) -> str:
        return model.dump_json(self.to_dict(), pretty=pretty)

    @classmethod
    def from_dict(cls, data: Mapping) -> "SyncBundle":
        if not isinstance(data, Mapping):
            raise MalformedBundle("bundle must be a JSON object")
        missing = [k for k in ("bundle_id", "produced_at", "producer", "records") if k not in data]
        if missing:
            raise MalformedBundle(f"missing fields: {', '.join(missing)}")
        if not isinstance(data["records"], list):
            raise MalformedBundle("records must be an array")
        records = []
        seen: set[tuple] = set()
        for i, item in enumerate(data["records"]):
            try:
                env = PlaybookEnvelope.from_dict(item)
            except (MalformedEnvelope, TypeError) as exc:
                raise MalformedBundle(f"records[{i}]: {exc}") from None
            key = (env.id, env.modified)
            if key in seen:
                raise MalformedBundle(f"records[{i}]: duplicate (id, modified)")
            seen.add(key)
            records.append(env)
        try:
            produced_at = model.parse_timestamp(data["produced_at"])
        except MalformedTimestamp as exc:
            raise MalformedBundle(f"produced_at: {exc}") from None
        return cls(
            bundle_id=str(data["bundle_id"]),
            produced_at=produced_at,
            producer=str(data["producer"]),
            records=tuple(records),
        )

    @classmethod
    def from_json(cls, text: str | bytes) -> "SyncBundle":
        try:
            data = json.loads(text)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise MalformedBundle(f"not valid JSON: {exc}") from None
        return cls.from_dict(data)


@dataclass(frozen=True)
class ImportReport:
    inserted: int = 0
    new_versions: int = 0
    duplicates: int = 0
    stale_ignored: int = 0
    conflicts: int = 0

    def to_dict(self) -> dict:
        return {
            "inserted": self.inserted,
            "new_versions": self.new_versions,
            "duplicates": self.duplicates,
            "stale_ignored": self.stale_ignored,
            "conflicts": self.conflicts,
        }

    def to_json(self, pretty: bool = False) -> str:
        return model.dump_json(self.to_dict(), pretty=pretty)


def export_bundle(
    store: PlaybookStore,
    query: QueryFilter = EXPORT_ALL,
    producer: str = ORIGIN_LOCAL,
    clock: Clock | None = None,
    uuid_source: UuidSource | None = None,
) -> SyncBundle:
    """Bundle the full history chain of every id whose head matches `query`.

    The default query exports everything, revoked chains included, which is
    what replication needs; pass a narrower filter for selective sharing.
    """
    records: list[PlaybookEnvelope] = []
    for head in store.search(query):
        records.extend(rec.envelope for rec in store.history(head.envelope.id))
    records.sort(key=lambda env: (env.id, env.modified))
    return SyncBundle(
        bundle_id=str((uuid_source or uuid.uuid4)()),
        produced_at=(clock or model.utc_now)(),
        producer=producer,
        records=tuple(records),
    )


def import_bundle(store: PlaybookStore, bundle: SyncBundle, clock: Clock | None = None) -> ImportReport:
    """Fold the bundle into the store (last-writer-wins, local wins on ties).

    Records that fail envelope validation and exact-version content clashes
    are counted as conflicts and skipped. The fold runs under the store's
    write mutex so concurrent readers never observe a half-applied bundle.
    """
    now = (clock or model.utc_now)()
    tally = {PUT_INSERTED: 0, PUT_NEW_VERSION: 0, PUT_DUPLICATE: 0, PUT_STALE_IGNORED: 0}
    conflicts = 0
    with store.locked():
        for env in bundle.records:
            if not model.validate_envelope(env).ok:
                conflicts += 1
                continue
            record = StoreRecord(env, ingested_at=now, origin=bundle.producer)
            try:
                tally[store.put(record)] += 1
            except ConflictingContent:
                conflicts += 1
    return ImportReport(
        inserted=tally[PUT_INSERTED],
        new_versions=tally[PUT_NEW_VERSION],
        duplicates=tally[PUT_DUPLICATE],
        stale_ignored=tally[PUT_STALE_IGNORED],
        conflicts=conflicts,
    )


# --- HTTP service -----------------------------------------------------------

def _parse_query_filter(query_string: str) -> QueryFilter:
    params = parse_qs(query_string, keep_blank_values=False)
    kwargs: dict = {}
    if "type" in params:
        kwargs["playbook_type"] = frozenset(params["type"])
    if "label" in params:
        kwargs["label"] = params["label"][0]
    if "standard" in params:
        kwargs["playbook_standard"] = params["standard"][0]
    if "creator" in params:
        kwargs["creator"] = params["creator"][0]
    if "valid_at" in params:
        kwargs["valid_at"] = model.parse_timestamp(params["valid_at"][0])
    if "text" in params:
        kwargs["text"] = params["text"][0]
    if "include_revoked" in params:
        kwargs["include_revoked"] = params["include_revoked"][0].lower() in ("1", "true", "yes")
    return QueryFilter(**kwargs)


class _Handler(BaseHTTPRequestHandler):
    server_version = "pbmeta/0.1"
    protocol_version = "HTTP/1.1"

    @property
    def store(self) -> PlaybookStore:
        return self.server.playbook_store

    def _send_json(self, status: int, payload) -> None:
        body = model.dump_json(payload, pretty=True).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _error(self, status: int, code: str, detail: str | None = None) -> None:
        payload = {"error": code}
        if detail:
            payload["detail"] = detail
        self._send_json(status, payload)

    def do_GET(self) -> None:  # noqa: N802 (http.server API)
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        try:
            if url.path == "/healthz":
                self._send_json(200, {"status": "ok"})
            elif parts == ["playbooks"]:
                try:
                    query = _parse_query_filter(url.query)
                except (MalformedTimestamp, ValueError) as exc:
                    self._error(400, "bad_query", str(exc))
                    return
                self._send_json(200, [rec.to_dict() for rec in self.store.search(query)])
            elif len(parts) == 2 and parts[0] == "playbooks":
                self._send_json(200, self.store.get(parts[1]).to_dict())
            elif len(parts) == 3 and parts[0] == "playbooks" and parts[2] == "history":
                self._send_json(200, [rec.to_dict() for rec in self.store.history(parts[1])])
            elif url.path == "/bundle":
                self._send_json(200, export_bundle(self.store).to_dict())
            else:
                self._error(404, "not_found")
        except NotFound:
            self._error(404, "not_found")

    def do_POST(self) -> None:  # noqa: N802
        url = urlparse(self.path)
        if url.path != "/bundle":
            self._error(404, "not_found")
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
        except ValueError:
            length = 0
        body = self.rfile.read(length)
        try:
            bundle = SyncBundle.from_json(body)
        except MalformedBundle as exc:
            self._error(400, "malformed_bundle", str(exc))
            return
        self._send_json(200, import_bundle(self.store, bundle).to_dict())

    def log_message(self, format: str, *args) -> None:
        # via logging instead of bare stderr writes
        logger.info("%s %s", self.address_string(), format % args)


@dataclass
class PlaybookService:
    server: ThreadingHTTPServer
    thread: threading.Thread

    @property
    def address(self) -> tuple[str, int]:
        return self.server.server_address[:2]

    def shutdown(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        self.thread.join(timeout=5)


def parse_bind(bind: str) -> tuple[str, int]:
    host, _, port = bind.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bind address must be host:port, got {bind!r}")
    return host, int(port)


def serve(store: PlaybookStore, bind: str = "127.0.0.1:8727") -> PlaybookService:
    """Start the HTTP service on `bind` ("host:port"); returns a handle."""
    host, port = parse_bind(bind)
    try:
        server = ThreadingHTTPServer((host, port), _Handler)
    except OSError as exc:
        raise BindFailure(f"cannot bind {bind}: {exc}") from None
    server.playbook_store = store
    thread = threading.Thread(target=server.serve_forever, name="pbmeta-service", daemon=True)
    thread.start()
    return PlaybookService(server=server, thread=thread)
