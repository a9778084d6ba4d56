"""Envelope <-> STIX 2.1 course-of-action records.

The base course-of-action object cannot carry automated playbooks, and its
`action` property is reserved, so the whole envelope rides in a property
extension. The COA id reuses the envelope's uuid, which lets consumers
correlate the two representations without a lookup table.
"""

from __future__ import annotations

import json
import uuid
from collections.abc import Mapping
from dataclasses import dataclass

from . import model
from .errors import InvalidEnvelope, MissingExtension, ResultInvalid, WrongType
from .model import PlaybookEnvelope

STIX_TYPE = "course-of-action"
SPEC_VERSION = "2.1"
EXTENSION_ID = "extension-definition--809c4d84-7a6e-4787-a2b3-8f2a7c3d8f5e"
RESERVED_PROPERTIES = ("action",)


@dataclass(frozen=True)
class StixCoaRecord:
    id: str
    created: str
    modified: str
    name: str
    extensions: Mapping
    description: str | None = None
    type: str = STIX_TYPE
    spec_version: str = SPEC_VERSION

    def to_dict(self) -> dict:
        out: dict = {
            "type": self.type,
            "spec_version": self.spec_version,
            "id": self.id,
            "created": self.created,
            "modified": self.modified,
            "name": self.name,
        }
        if self.description is not None:
            out["description"] = self.description
        out["extensions"] = {k: dict(v) for k, v in self.extensions.items()}
        return out

    def to_json(self, pretty: bool = False) -> str:
        return model.dump_json(self.to_dict(), pretty=pretty)

    @classmethod
    def from_dict(cls, data: Mapping) -> "StixCoaRecord":
        return cls(
            type=str(data.get("type", "")),
            spec_version=str(data.get("spec_version", "")),
            id=str(data.get("id", "")),
            created=str(data.get("created", "")),
            modified=str(data.get("modified", "")),
            name=str(data.get("name", "")),
            description=data.get("description"),
            extensions=data.get("extensions", {}),
        )

    @classmethod
    def from_json(cls, text: str | bytes) -> "StixCoaRecord":
        return cls.from_dict(json.loads(text))


def to_stix_coa(env: PlaybookEnvelope) -> StixCoaRecord:
    """Represent a valid envelope as a course-of-action record.

    Every envelope field is embedded verbatim (canonical JSON form) in the
    playbook metadata extension; the reserved `action` property is never
    emitted.
    """
    report = model.validate_envelope(env)
    if not report.ok:
        raise InvalidEnvelope(report)
    extension = {"extension_type": "property-extension"}
    extension.update(env.to_dict())
    return StixCoaRecord(
        id=f"{STIX_TYPE}--{env.uuid_part}",
        created=model.format_timestamp(env.created),
        modified=model.format_timestamp(env.modified),
        name=min(env.label) if env.label else env.id,
        description=env.description,
        extensions={EXTENSION_ID: extension},
    )


def from_stix_coa(rec: StixCoaRecord | Mapping) -> PlaybookEnvelope:
    """Rebuild the envelope from the record's metadata extension.

    The extension is the source of truth; the record-level created/modified
    and name are derived copies. The result must pass envelope validation.
    """
    if isinstance(rec, Mapping):
        rec = StixCoaRecord.from_dict(rec)
    if rec.type != STIX_TYPE:
        raise WrongType(f"type is {rec.type!r}, expected {STIX_TYPE!r}")
    extension = rec.extensions.get(EXTENSION_ID) if isinstance(rec.extensions, Mapping) else None
    if not isinstance(extension, Mapping):
        raise MissingExtension(f"extension {EXTENSION_ID} not present")
    fields = {k: v for k, v in extension.items() if k != "extension_type"}
    env = PlaybookEnvelope.from_dict(fields)
    report = model.validate_envelope(env)
    if not report.ok:
        raise ResultInvalid(report)
    return env


def bundle_records(records, uuid_source: model.UuidSource | None = None) -> dict:
    """Wrap records in a STIX-style bundle object."""
    return {
        "type": "bundle",
        "id": f"bundle--{(uuid_source or uuid.uuid4)()}",
        "objects": [r.to_dict() for r in records],
    }
