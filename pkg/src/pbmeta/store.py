"""Versioned playbook knowledge base.

Records live in an append-only JSON-lines log; an in-memory index keyed by
(envelope id, modified) is rebuilt on open. Revocation is the only removal
semantic: superseded and revoked versions stay in history. A cross-process
advisory lock on `.lock` enforces the many-readers/single-writer contract;
within a process, a mutex serializes writes and gives readers a consistent
snapshot.
"""

from __future__ import annotations

import fcntl
import json
import logging
import threading
from collections.abc import Mapping
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

from . import model
from .errors import (
    ConflictingContent,
    InvalidEnvelope,
    NotFound,
    PlaybookError,
    ReadOnlyStore,
    StoreLocked,
)
from .model import Clock, PlaybookEnvelope

logger = logging.getLogger(__name__)

LOG_NAME = "log.jsonl"
LOCK_NAME = ".lock"

PUT_INSERTED = "inserted"
PUT_NEW_VERSION = "new_version"
PUT_DUPLICATE = "duplicate"
PUT_STALE_IGNORED = "stale_ignored"

ORIGIN_LOCAL = "local"


@dataclass(frozen=True)
class StoreRecord:
    envelope: PlaybookEnvelope
    ingested_at: datetime
    origin: str = ORIGIN_LOCAL

    def to_dict(self) -> dict:
        return {
            "envelope": self.envelope.to_dict(),
            "ingested_at": model.format_timestamp(self.ingested_at),
            "origin": self.origin,
        }

    def to_json(self, pretty: bool = False) -> str:
        return model.dump_json(self.to_dict(), pretty=pretty)

    @classmethod
    def from_dict(cls, data: Mapping) -> "StoreRecord":
        return cls(
            envelope=PlaybookEnvelope.from_dict(data["envelope"]),
            ingested_at=model.parse_timestamp(data["ingested_at"]),
            origin=str(data.get("origin", ORIGIN_LOCAL)),
        )


@dataclass(frozen=True)
class QueryFilter:
    """Conjunctive head filter; unset predicates match everything."""

    label: str | None = None
    playbook_type: frozenset[str] = frozenset()  # any-of when non-empty
    playbook_standard: str | None = None
    creator: str | None = None
    valid_at: datetime | None = None
    include_revoked: bool = False
    text: str | None = None

    def matches(self, env: PlaybookEnvelope) -> bool:
        if env.revoked and not self.include_revoked:
            return False
        if self.label is not None and self.label not in env.label:
            return False
        if self.playbook_type and not (self.playbook_type & env.playbook_type):
            return False
        if self.playbook_standard is not None and env.playbook_standard != self.playbook_standard:
            return False
        if self.creator is not None and env.creator != self.creator:
            return False
        if self.valid_at is not None and not model.is_valid_at(env, self.valid_at):
            return False
        if self.text is not None and self.text not in (env.description or ""):
            return False
        return True


def _priority_rank(env: PlaybookEnvelope) -> int:
    # 1 is the highest priority; 0 means undefined and must sort last.
    return 101 if env.priority == 0 else env.priority


def head_order_key(record: StoreRecord):
    """Total search ordering: priority asc (undefined last), modified desc, id asc."""
    env = record.envelope
    return (_priority_rank(env), -env.modified.timestamp(), env.id)


class PlaybookStore:
    """Store handle over one directory; use as a context manager.

    A writable handle takes the exclusive advisory writer lock. Read-only
    handles take no lock at all: the log is append-only, so a reader that
    races a writer sees at worst a truncated trailing line, which is
    dropped. Open read-only for queries so they can run next to a writer.
    """

    def __init__(self, directory: str | Path, read_only: bool = False):
        self.directory = Path(directory)
        self.read_only = read_only
        self.directory.mkdir(parents=True, exist_ok=True)
        self._mutex = threading.RLock()
        self._versions: dict[str, dict[datetime, StoreRecord]] = {}
        self._lock_file = None
        if not read_only:
            self._lock_file = open(self.directory / LOCK_NAME, "a+")
            try:
                fcntl.flock(self._lock_file, fcntl.LOCK_EX | fcntl.LOCK_NB)
            except OSError:
                self._lock_file.close()
                self._lock_file = None
                raise StoreLocked(f"store is locked: {self.directory}") from None
        self._log_path = self.directory / LOG_NAME
        self._load()
        self._log_file = None if read_only else open(self._log_path, "a", encoding="utf-8")

    # --- lifecycle -----------------------------------------------------

    def close(self) -> None:
        if self._log_file is not None:
            self._log_file.close()
            self._log_file = None
        if self._lock_file is not None and not self._lock_file.closed:
            fcntl.flock(self._lock_file, fcntl.LOCK_UN)
            self._lock_file.close()

    def __enter__(self) -> "PlaybookStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @contextmanager
    def locked(self):
        """Hold the write mutex across several operations (atomic import)."""
        with self._mutex:
            yield self

    def _load(self) -> None:
        if not self._log_path.exists():
            return
        raw = self._log_path.read_text(encoding="utf-8")
        lines = raw.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        for lineno, line in enumerate(lines, start=1):
            try:
                record = StoreRecord.from_dict(json.loads(line))
            except Exception as exc:
                if lineno == len(lines):
                    logger.warning("dropping truncated trailing log line %d: %s", lineno, exc)
                    break
                raise PlaybookError(f"corrupt store log at line {lineno}: {exc}") from None
            versions = self._versions.setdefault(record.envelope.id, {})
            key = record.envelope.modified
            if key in versions:
                if versions[key].envelope != record.envelope:
                    logger.warning(
                        "conflicting duplicate of (%s, %s) in log; keeping first",
                        record.envelope.id,
                        key,
                    )
                continue
            versions[key] = record

    # --- writes ----------------------------------------------------------

    def put(self, record: StoreRecord) -> str:
        """Insert one version; returns the put outcome.

        Identical (id, modified) re-inserts are duplicates and change
        nothing; same key with different content is refused. A version older
        than the current head is kept in history but does not move the head.
        """
        if self.read_only:
            raise ReadOnlyStore(f"store opened read-only: {self.directory}")
        report = model.validate_envelope(record.envelope)
        if not report.ok:
            raise InvalidEnvelope(report)
        env = record.envelope
        with self._mutex:
            versions = self._versions.setdefault(env.id, {})
            if env.modified in versions:
                if versions[env.modified].envelope != env:
                    raise ConflictingContent(f"({env.id}, {model.format_timestamp(env.modified)})")
                return PUT_DUPLICATE
            if not versions:
                outcome = PUT_INSERTED
            elif env.modified > max(versions):
                outcome = PUT_NEW_VERSION
            else:
                outcome = PUT_STALE_IGNORED
            self._log_file.write(record.to_json() + "\n")
            self._log_file.flush()
            versions[env.modified] = record
            return outcome

    def put_envelope(
        self, env: PlaybookEnvelope, origin: str = ORIGIN_LOCAL, clock: Clock | None = None
    ) -> str:
        return self.put(StoreRecord(env, ingested_at=(clock or model.utc_now)(), origin=origin))

    # --- reads -----------------------------------------------------------

    def ids(self) -> list[str]:
        with self._mutex:
            return sorted(self._versions)

    def get(self, playbook_id: str) -> StoreRecord:
        with self._mutex:
            versions = self._versions.get(playbook_id)
            if not versions:
                raise NotFound(playbook_id)
            return versions[max(versions)]

    def history(self, playbook_id: str) -> list[StoreRecord]:
        with self._mutex:
            versions = self._versions.get(playbook_id)
            if not versions:
                raise NotFound(playbook_id)
            return [versions[key] for key in sorted(versions)]

    def heads(self) -> list[StoreRecord]:
        with self._mutex:
            return [versions[max(versions)] for _, versions in sorted(self._versions.items())]

    def search(self, query: QueryFilter | None = None) -> list[StoreRecord]:
        """Latest version per id matching all predicates, in total order."""
        query = query or QueryFilter()
        with self._mutex:
            hits = [rec for rec in self.heads() if query.matches(rec.envelope)]
        return sorted(hits, key=head_order_key)
