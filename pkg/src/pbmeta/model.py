"""The metadata envelope wrapped around a security playbook body.

An envelope carries management metadata (who made the playbook, when, how
severe the conditions it addresses are, ...) plus the playbook itself in
native bytes and/or base64. All values are immutable; operations return new
envelopes. Validation never raises: it returns a report listing every
violated rule so callers can surface all problems at once.
"""

from __future__ import annotations

import base64
import binascii
import json
import re
import uuid
from collections.abc import Callable, Mapping
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone

from .errors import (
    AlreadyRevoked,
    EmptyBody,
    EmptyTypeSet,
    IllegalFieldChange,
    MalformedBase64,
    MalformedEnvelope,
    MalformedTimestamp,
    MissingBody,
    ResultInvalid,
)

Clock = Callable[[], datetime]
UuidSource = Callable[[], uuid.UUID]

PLAYBOOK_TYPES = (
    "Notification",
    "Detection",
    "Investigation",
    "Prevention",
    "Mitigation",
    "Remediation",
    "Attack",
)

ABSTRACTION_LEVELS = ("Template", "Executable")

ID_PREFIX = "security-playbook--"
_ID_RE = re.compile(
    r"^security-playbook--[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12}$"
)

# Canonical serialization order; also the order findings are reported in.
FIELD_ORDER = (
    "id",
    "created",
    "modified",
    "revoked",
    "creator",
    "valid_from",
    "valid_until",
    "description",
    "label",
    "impact",
    "severity",
    "priority",
    "organization_type",
    "playbook_type",
    "playbook_standard",
    "playbook_abstraction",
    "playbook",
    "playbook_base64",
)

REQUIRED_FIELDS = (
    "id",
    "created",
    "modified",
    "revoked",
    "creator",
    "playbook_type",
    "playbook_standard",
    "playbook_abstraction",
)

SEVERITY_ERROR = "error"
SEVERITY_WARNING = "warning"


# --- timestamps ----------------------------------------------------------
# Stored as timezone-aware UTC datetimes truncated to whole milliseconds;
# serialized as RFC 3339 with a Z suffix and exactly three fractional digits.

def truncate_ms(dt: datetime) -> datetime:
    return dt.replace(microsecond=(dt.microsecond // 1000) * 1000)


def utc_now() -> datetime:
    """Default clock: current UTC time at millisecond precision."""
    return truncate_ms(datetime.now(timezone.utc))


def format_timestamp(dt: datetime) -> str:
    if dt.tzinfo is None:
        raise MalformedTimestamp(f"naive datetime not allowed: {dt!r}")
    dt = dt.astimezone(timezone.utc)
    return f"{dt.strftime('%Y-%m-%dT%H:%M:%S')}.{dt.microsecond // 1000:03d}Z"


def parse_timestamp(value: str) -> datetime:
    """Parse an RFC 3339 timestamp into a UTC datetime (ms precision).

    Accepts any UTC offset and any fractional precision; the result is
    normalized to UTC and truncated to milliseconds.
    """
    if not isinstance(value, str):
        raise MalformedTimestamp(f"expected timestamp string, got {type(value).__name__}")
    text = value[:-1] + "+00:00" if value.endswith(("Z", "z")) else value
    try:
        dt = datetime.fromisoformat(text)
    except ValueError:
        raise MalformedTimestamp(f"not an RFC 3339 timestamp: {value!r}") from None
    if dt.tzinfo is None:
        raise MalformedTimestamp(f"timestamp lacks a UTC offset: {value!r}")
    return truncate_ms(dt.astimezone(timezone.utc))


def new_playbook_id(source: UuidSource | None = None) -> str:
    return ID_PREFIX + str((source or uuid.uuid4)()).lower()


def is_playbook_id(value: object) -> bool:
    return isinstance(value, str) and bool(_ID_RE.match(value))


# --- validation report ----------------------------------------------------

@dataclass(frozen=True)
class Finding:
    path: str
    severity: str
    message: str

    def to_dict(self) -> dict:
        return {"path": self.path, "severity": self.severity, "message": self.message}


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...] = ()

    @property
    def ok(self) -> bool:
        return not any(f.severity == SEVERITY_ERROR for f in self.findings)

    @property
    def errors(self) -> tuple[Finding, ...]:
        return tuple(f for f in self.findings if f.severity == SEVERITY_ERROR)

    @property
    def warnings(self) -> tuple[Finding, ...]:
        return tuple(f for f in self.findings if f.severity == SEVERITY_WARNING)

    def to_dict(self) -> dict:
        return {"ok": self.ok, "findings": [f.to_dict() for f in self.findings]}

    def to_json(self, pretty: bool = False) -> str:
        return dump_json(self.to_dict(), pretty=pretty)


def dump_json(obj: object, pretty: bool = False) -> str:
    if pretty:
        return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


# --- the envelope ----------------------------------------------------------

@dataclass(frozen=True)
class PlaybookEnvelope:
    """One playbook plus its management metadata.

    Scores (impact, severity, priority) range 0..100, where 0 means
    "specifically undefined". For impact and severity 100 is the strongest;
    for priority 1 is the highest and 100 the lowest.
    """

    id: str
    created: datetime
    modified: datetime
    revoked: bool
    creator: str
    playbook_standard: str
    playbook_abstraction: str
    playbook_type: frozenset[str]
    valid_from: datetime | None = None
    valid_until: datetime | None = None
    description: str | None = None
    label: frozenset[str] = frozenset()
    impact: int = 0
    severity: int = 0
    priority: int = 0
    organization_type: frozenset[str] = frozenset()
    playbook: bytes | None = None
    playbook_base64: str | None = None

    @property
    def uuid_part(self) -> str:
        return self.id[len(ID_PREFIX):] if self.id.startswith(ID_PREFIX) else self.id

    def to_dict(self) -> dict:
        """Canonical JSON form: fixed key order, absent optionals omitted.

        The raw body is emitted base64-encoded under `playbook` (JSON cannot
        carry bytes); `playbook_base64` stays the explicit interchange field.
        Scores of 0 mean undefined and are treated as absent.
        """
        out: dict = {
            "id": self.id,
            "created": format_timestamp(self.created),
            "modified": format_timestamp(self.modified),
            "revoked": self.revoked,
            "creator": self.creator,
        }
        if self.valid_from is not None:
            out["valid_from"] = format_timestamp(self.valid_from)
        if self.valid_until is not None:
            out["valid_until"] = format_timestamp(self.valid_until)
        if self.description is not None:
            out["description"] = self.description
        if self.label:
            out["label"] = sorted(self.label)
        if self.impact:
            out["impact"] = self.impact
        if self.severity:
            out["severity"] = self.severity
        if self.priority:
            out["priority"] = self.priority
        if self.organization_type:
            out["organization_type"] = sorted(self.organization_type)
        out["playbook_type"] = sorted(self.playbook_type)
        out["playbook_standard"] = self.playbook_standard
        out["playbook_abstraction"] = self.playbook_abstraction
        if self.playbook is not None:
            out["playbook"] = base64.b64encode(self.playbook).decode("ascii")
        if self.playbook_base64 is not None:
            out["playbook_base64"] = self.playbook_base64
        return out

    def to_json(self, pretty: bool = False) -> str:
        return dump_json(self.to_dict(), pretty=pretty)

    @classmethod
    def from_dict(cls, data: Mapping) -> "PlaybookEnvelope":
        """Strict constructor: raises MalformedEnvelope on structural errors.

        Structural means wrong JSON types, unparseable timestamps/base64, or
        missing required fields. Semantic rules (ranges, ordering, enums) are
        left to validate_envelope so an out-of-range envelope can still be
        loaded and reported on.
        """
        candidate, findings, _ = _coerce_candidate(data)
        errors = [f for f in findings if f.severity == SEVERITY_ERROR]
        if errors:
            raise MalformedEnvelope(errors)
        return cls(**_candidate_to_kwargs(candidate))

    @classmethod
    def from_json(cls, text: str | bytes) -> "PlaybookEnvelope":
        try:
            data = json.loads(text)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise MalformedEnvelope(
                [Finding("$", SEVERITY_ERROR, f"not valid JSON: {exc}")]
            ) from None
        if not isinstance(data, Mapping):
            raise MalformedEnvelope([Finding("$", SEVERITY_ERROR, "not a JSON object")])
        return cls.from_dict(data)


_ABSENT = object()


def _coerce_candidate(data: Mapping) -> tuple[dict, list[Finding]]:
    """Best-effort typed view of an envelope-shaped mapping.

    Each field is independently coerced; failures produce an error finding
    and leave the field absent so later checks do not cascade.
    """
    findings: list[Finding] = []
    cand: dict = {name: _ABSENT for name in FIELD_ORDER}
    failed: set[str] = set()

    def err(path: str, message: str) -> None:
        failed.add(path)
        findings.append(Finding(path, SEVERITY_ERROR, message))

    def take_str(name: str) -> None:
        value = data.get(name, _ABSENT)
        if value is _ABSENT:
            return
        if isinstance(value, str):
            cand[name] = value
        else:
            err(name, f"expected string, got {type(value).__name__}")

    def take_ts(name: str) -> None:
        value = data.get(name, _ABSENT)
        if value is _ABSENT:
            return
        if isinstance(value, datetime):
            if value.tzinfo is None:
                err(name, "naive datetime not allowed")
            else:
                cand[name] = truncate_ms(value.astimezone(timezone.utc))
            return
        try:
            cand[name] = parse_timestamp(value)
        except MalformedTimestamp as exc:
            err(name, str(exc))

    def take_int(name: str) -> None:
        value = data.get(name, _ABSENT)
        if value is _ABSENT:
            return
        if isinstance(value, bool) or not isinstance(value, int):
            err(name, f"expected integer, got {type(value).__name__}")
        else:
            cand[name] = value

    def take_str_set(name: str) -> None:
        value = data.get(name, _ABSENT)
        if value is _ABSENT:
            return
        if isinstance(value, (set, frozenset, list, tuple)):
            items = list(value)
            bad = [v for v in items if not isinstance(v, str)]
            if bad:
                err(name, "entries must be strings")
            else:
                cand[name] = frozenset(items)
        else:
            err(name, f"expected array, got {type(value).__name__}")

    take_str("id")
    take_ts("created")
    take_ts("modified")

    revoked = data.get("revoked", _ABSENT)
    if revoked is not _ABSENT:
        if isinstance(revoked, bool):
            cand["revoked"] = revoked
        else:
            err("revoked", f"expected boolean, got {type(revoked).__name__}")

    take_str("creator")
    take_ts("valid_from")
    take_ts("valid_until")
    take_str("description")
    take_str_set("label")
    take_int("impact")
    take_int("severity")
    take_int("priority")
    take_str_set("organization_type")
    take_str_set("playbook_type")
    take_str("playbook_standard")
    take_str("playbook_abstraction")

    body = data.get("playbook", _ABSENT)
    if body is not _ABSENT:
        if isinstance(body, bytes):
            cand["playbook"] = body
        elif isinstance(body, str):
            try:
                cand["playbook"] = decode_base64(body)
            except MalformedBase64 as exc:
                err("playbook", str(exc))
        else:
            err("playbook", f"expected base64 string, got {type(body).__name__}")

    b64 = data.get("playbook_base64", _ABSENT)
    if b64 is not _ABSENT:
        if isinstance(b64, str):
            cand["playbook_base64"] = b64
        else:
            err("playbook_base64", f"expected string, got {type(b64).__name__}")

    for name in sorted(set(data) - set(FIELD_ORDER)):
        findings.append(Finding(str(name), SEVERITY_WARNING, "unknown field"))

    return cand, findings, failed


def _candidate_to_kwargs(cand: dict) -> dict:
    required_missing = [n for n in REQUIRED_FIELDS if cand[n] is _ABSENT]
    if required_missing:
        raise MalformedEnvelope(
            [Finding(n, SEVERITY_ERROR, "missing required field") for n in required_missing]
        )
    defaults = {
        "valid_from": None,
        "valid_until": None,
        "description": None,
        "label": frozenset(),
        "impact": 0,
        "severity": 0,
        "priority": 0,
        "organization_type": frozenset(),
        "playbook": None,
        "playbook_base64": None,
    }
    kwargs = {}
    for name in FIELD_ORDER:
        value = cand[name]
        kwargs[name] = defaults[name] if value is _ABSENT else value
    return kwargs


# --- base64 ---------------------------------------------------------------

def encode_base64(body: bytes) -> str:
    return base64.b64encode(body).decode("ascii")


def decode_base64(text: str) -> bytes:
    try:
        return base64.b64decode(text.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError, ValueError):
        raise MalformedBase64(f"not valid base64: {text[:40]!r}") from None


# --- validation -------------------------------------------------------------

def validate_envelope(env: PlaybookEnvelope | Mapping) -> ValidationReport:
    """Report every violated envelope rule; never raises.

    Accepts either a constructed envelope or a raw mapping (e.g. freshly
    parsed JSON), so even structurally broken candidates get a full report.
    Findings are emitted in canonical field order, making the serialized
    report byte-stable for identical input.
    """
    if isinstance(env, PlaybookEnvelope):
        cand = {name: getattr(env, name) for name in FIELD_ORDER}
        for name in ("valid_from", "valid_until", "description", "playbook", "playbook_base64"):
            if cand[name] is None:
                cand[name] = _ABSENT
        findings: list[Finding] = []
        failed: set[str] = set()
    else:
        cand, findings, failed = _coerce_candidate(env)

    findings.extend(_rule_findings(cand, failed))
    order = {name: i for i, name in enumerate(FIELD_ORDER)}
    findings.sort(key=lambda f: (order.get(f.path, len(order)), f.path, f.severity, f.message))
    return ValidationReport(tuple(findings))


def _rule_findings(cand: dict, failed: set[str] = frozenset()) -> list[Finding]:
    out: list[Finding] = []

    def err(path: str, message: str) -> None:
        out.append(Finding(path, SEVERITY_ERROR, message))

    for name in REQUIRED_FIELDS:
        if cand[name] is _ABSENT and name not in failed:
            err(name, "missing required field")

    if cand["id"] is not _ABSENT and not is_playbook_id(cand["id"]):
        err("id", f"must match {ID_PREFIX}<lowercase uuid>")

    if cand["creator"] is not _ABSENT and not cand["creator"].strip():
        err("creator", "must be non-empty")
    if cand["playbook_standard"] is not _ABSENT and not cand["playbook_standard"].strip():
        err("playbook_standard", "must be non-empty")

    created, modified = cand["created"], cand["modified"]
    if created is not _ABSENT and modified is not _ABSENT and modified < created:
        err("modified", "must not precede created")

    vfrom, vuntil = cand["valid_from"], cand["valid_until"]
    if vfrom is not _ABSENT and vuntil is not _ABSENT and vfrom > vuntil:
        err("valid_until", "must not precede valid_from")

    for name in ("label", "organization_type"):
        values = cand[name]
        if values is _ABSENT:
            continue
        if any(not v.strip() for v in values):
            err(name, "entries must be non-empty")
        trimmed = [v.strip() for v in values]
        if len(set(trimmed)) != len(trimmed):
            err(name, "entries must be unique after trimming")

    for name in ("impact", "severity", "priority"):
        value = cand[name]
        if value is not _ABSENT and not 0 <= value <= 100:
            err(name, "out of range 0..100")

    types = cand["playbook_type"]
    if types is not _ABSENT:
        if not types:
            err("playbook_type", "must not be empty")
        unknown = sorted(t for t in types if t not in PLAYBOOK_TYPES)
        if unknown:
            err("playbook_type", f"unknown values: {', '.join(unknown)}")

    abstraction = cand["playbook_abstraction"]
    if abstraction is not _ABSENT and abstraction not in ABSTRACTION_LEVELS:
        err("playbook_abstraction", f"must be one of: {', '.join(ABSTRACTION_LEVELS)}")

    body, b64 = cand["playbook"], cand["playbook_base64"]
    if body is _ABSENT and b64 is _ABSENT and not {"playbook", "playbook_base64"} & failed:
        err("playbook", "at least one of playbook, playbook_base64 required")
    if b64 is not _ABSENT:
        try:
            decoded = decode_base64(b64)
        except MalformedBase64 as exc:
            out.append(Finding("playbook_base64", SEVERITY_ERROR, str(exc)))
        else:
            if body is not _ABSENT and decoded != body:
                err("playbook_base64", "body/base64 mismatch")

    return out


# --- operations -------------------------------------------------------------

def new_envelope(
    creator: str,
    standard: str,
    abstraction: str,
    types,
    body: bytes,
    clock: Clock | None = None,
    uuid_source: UuidSource | None = None,
) -> PlaybookEnvelope:
    """Create a fresh envelope around a playbook body.

    All generated values (id, timestamps) come from the injected sources so
    callers can pin them for reproducible output.
    """
    types = frozenset(types)
    if not types:
        raise EmptyTypeSet("at least one playbook type required")
    if not body:
        raise EmptyBody("playbook body must be non-empty")
    now = (clock or utc_now)()
    return PlaybookEnvelope(
        id=new_playbook_id(uuid_source),
        created=truncate_ms(now),
        modified=truncate_ms(now),
        revoked=False,
        creator=creator,
        playbook_standard=standard,
        playbook_abstraction=abstraction,
        playbook_type=types,
        playbook=bytes(body),
    )


def _bumped_modified(env: PlaybookEnvelope, clock: Clock | None) -> datetime:
    # Strictly monotone: if the clock has not advanced past the previous
    # modified, step forward by one millisecond.
    now = truncate_ms((clock or utc_now)())
    floor = env.modified + timedelta(milliseconds=1)
    return max(now, floor)


_SET_FIELDS = {"label", "organization_type", "playbook_type"}
_TS_FIELDS = {"valid_from", "valid_until", "modified"}


def revise(
    env: PlaybookEnvelope,
    changes: Mapping[str, object],
    clock: Clock | None = None,
) -> PlaybookEnvelope:
    """Produce the next version of an envelope.

    `changes` maps field names to new values (JSON-ish values are accepted:
    timestamp strings, lists for sets). id and created are immutable; the
    result must pass validation or the revision is refused.
    """
    illegal = sorted(set(changes) & {"id", "created"})
    if illegal:
        raise IllegalFieldChange(f"cannot change: {', '.join(illegal)}")
    unknown = sorted(set(changes) - set(FIELD_ORDER))
    if unknown:
        raise IllegalFieldChange(f"unknown fields: {', '.join(unknown)}")

    kwargs: dict = {}
    for name, value in changes.items():
        if name == "modified":
            continue  # modified is always regenerated below
        if name in _SET_FIELDS and value is not None:
            kwargs[name] = frozenset(value)
        elif name in _TS_FIELDS and isinstance(value, str):
            kwargs[name] = parse_timestamp(value)
        elif name == "playbook" and isinstance(value, str):
            kwargs[name] = decode_base64(value)
        else:
            kwargs[name] = value

    result = replace(env, modified=_bumped_modified(env, clock), **kwargs)
    report = validate_envelope(result)
    if not report.ok:
        raise ResultInvalid(report)
    return result


def revoke(env: PlaybookEnvelope, clock: Clock | None = None) -> PlaybookEnvelope:
    """Mark the envelope as no longer valid (a state, not a deletion)."""
    if env.revoked:
        raise AlreadyRevoked(env.id)
    return replace(env, revoked=True, modified=_bumped_modified(env, clock))


def encode_body(env: PlaybookEnvelope) -> PlaybookEnvelope:
    """Fill playbook_base64 from the raw body."""
    if env.playbook is None:
        raise MissingBody("playbook is not set")
    return replace(env, playbook_base64=encode_base64(env.playbook))


def decode_body(env: PlaybookEnvelope) -> PlaybookEnvelope:
    """Fill the raw body from playbook_base64."""
    if env.playbook_base64 is None:
        raise MissingBody("playbook_base64 is not set")
    return replace(env, playbook=decode_base64(env.playbook_base64))


def is_valid_at(env: PlaybookEnvelope, t: datetime) -> bool:
    """True when the envelope is usable at time t.

    Revoked envelopes are never valid; the validity window is half-open:
    valid_from inclusive, valid_until exclusive.
    """
    if env.revoked:
        return False
    if env.valid_from is not None and t < env.valid_from:
        return False
    if env.valid_until is not None and t >= env.valid_until:
        return False
    return True
