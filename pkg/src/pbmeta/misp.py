"""Envelope <-> MISP object conversion.

The security-playbook object is a thin wrapper: one attribute per populated
envelope field, repeatable attributes for the set-valued fields. A lossy
downgrade to the legacy course-of-action object is provided for consumers
that only understand that template.
"""

from __future__ import annotations

import base64
from collections.abc import Mapping
from dataclasses import dataclass

from . import model
from .errors import (
    InvalidEnvelope,
    MalformedBase64,
    MissingMandatoryAttribute,
    WrongObjectName,
)
from .model import Finding, PlaybookEnvelope, SEVERITY_WARNING

OBJECT_NAME = "security-playbook"
OBJECT_META_CATEGORY = "misc"
OBJECT_DESCRIPTION = "Security playbook and the metadata needed to manage and share it"
TEMPLATE_UUID = "0a2ef1a8-54a5-4e4b-8e25-8f6ae3f93e69"
TEMPLATE_VERSION = 1

# envelope field -> (object_relation, MISP attribute type, repeatable)
ATTRIBUTE_MAP = {
    "id": ("id", "text", False),
    "created": ("created", "datetime", False),
    "modified": ("modified", "datetime", False),
    "revoked": ("revoked", "boolean", False),
    "creator": ("creator", "text", False),
    "valid_from": ("valid-from", "datetime", False),
    "valid_until": ("valid-until", "datetime", False),
    "description": ("description", "text", False),
    "label": ("label", "text", True),
    "impact": ("impact", "counter", False),
    "severity": ("severity", "counter", False),
    "priority": ("priority", "counter", False),
    "organization_type": ("organization-type", "text", True),
    "playbook_type": ("playbook-type", "text", True),
    "playbook_standard": ("playbook-standard", "text", False),
    "playbook_abstraction": ("playbook-abstraction", "text", False),
    "playbook": ("playbook", "attachment", False),
    "playbook_base64": ("playbook-base64", "text", False),
}

_FIELD_BY_RELATION = {rel: name for name, (rel, _, _) in ATTRIBUTE_MAP.items()}

MANDATORY_RELATIONS = (
    "id",
    "created",
    "modified",
    "revoked",
    "creator",
    "playbook-type",
    "playbook-standard",
    "playbook-abstraction",
)


@dataclass(frozen=True)
class MispAttribute:
    object_relation: str
    type: str
    value: str

    def to_dict(self) -> dict:
        return {
            "object_relation": self.object_relation,
            "type": self.type,
            "value": self.value,
        }


@dataclass(frozen=True)
class MispObject:
    name: str
    template_uuid: str
    template_version: int
    uuid: str
    meta_category: str
    description: str
    attributes: tuple[MispAttribute, ...]

    def values_for(self, relation: str) -> list[str]:
        return [a.value for a in self.attributes if a.object_relation == relation]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "template_uuid": self.template_uuid,
            "template_version": self.template_version,
            "uuid": self.uuid,
            "meta-category": self.meta_category,
            "description": self.description,
            "Attribute": [a.to_dict() for a in self.attributes],
        }

    def to_json(self, pretty: bool = False) -> str:
        return model.dump_json(self.to_dict(), pretty=pretty)

    @classmethod
    def from_dict(cls, data: Mapping) -> "MispObject":
        attrs = []
        for item in data.get("Attribute", []):
            attrs.append(
                MispAttribute(
                    object_relation=str(item.get("object_relation", "")),
                    type=str(item.get("type", "")),
                    value=str(item.get("value", "")),
                )
            )
        return cls(
            name=str(data.get("name", "")),
            template_uuid=str(data.get("template_uuid", "")),
            template_version=int(data.get("template_version", 0)),
            uuid=str(data.get("uuid", "")),
            meta_category=str(data.get("meta-category", data.get("meta_category", ""))),
            description=str(data.get("description", "")),
            attributes=tuple(attrs),
        )


def _attribute_values(env: PlaybookEnvelope, name: str) -> list[str]:
    """Stringified values for one envelope field; [] when unpopulated."""
    value = getattr(env, name)
    if name in ("created", "modified", "valid_from", "valid_until"):
        return [model.format_timestamp(value)] if value is not None else []
    if name == "revoked":
        return ["true" if value else "false"]
    if name in ("impact", "severity", "priority"):
        return [str(value)] if value else []
    if name in ("label", "organization_type", "playbook_type"):
        return sorted(value)
    if name == "playbook":
        return [base64.b64encode(value).decode("ascii")] if value is not None else []
    return [value] if value is not None else []


def to_misp_object(env: PlaybookEnvelope) -> MispObject:
    """Wrap a valid envelope as a security-playbook object.

    Attributes appear in mapping-table order with set values sorted, so the
    serialized object is byte-stable. The object uuid reuses the envelope's
    uuid so the two representations correlate without a lookup.
    """
    report = model.validate_envelope(env)
    if not report.ok:
        raise InvalidEnvelope(report)
    attrs = []
    for name, (relation, misp_type, _) in ATTRIBUTE_MAP.items():
        for value in _attribute_values(env, name):
            attrs.append(MispAttribute(relation, misp_type, value))
    return MispObject(
        name=OBJECT_NAME,
        template_uuid=TEMPLATE_UUID,
        template_version=TEMPLATE_VERSION,
        uuid=env.uuid_part,
        meta_category=OBJECT_META_CATEGORY,
        description=OBJECT_DESCRIPTION,
        attributes=tuple(attrs),
    )


def from_misp_object(obj: MispObject | Mapping) -> tuple[PlaybookEnvelope, tuple[Finding, ...]]:
    """Rebuild an envelope from a security-playbook object.

    Unknown object relations are reported as warnings, not errors. Repeated
    values on a single-valued relation keep the first occurrence.
    """
    if isinstance(obj, Mapping):
        obj = MispObject.from_dict(obj)
    if obj.name != OBJECT_NAME:
        raise WrongObjectName(f"object name is {obj.name!r}, expected {OBJECT_NAME!r}")

    missing = [rel for rel in MANDATORY_RELATIONS if not obj.values_for(rel)]
    if not obj.values_for("playbook") and not obj.values_for("playbook-base64"):
        missing.append("playbook|playbook-base64")
    if missing:
        raise MissingMandatoryAttribute(missing)

    warnings: list[Finding] = []
    fields: dict = {}
    for attr in obj.attributes:
        name = _FIELD_BY_RELATION.get(attr.object_relation)
        if name is None:
            warnings.append(
                Finding(attr.object_relation, SEVERITY_WARNING, "unknown object_relation")
            )
            continue
        repeatable = ATTRIBUTE_MAP[name][2]
        if repeatable:
            fields.setdefault(name, set()).add(attr.value)
        elif name in fields:
            warnings.append(
                Finding(attr.object_relation, SEVERITY_WARNING, "repeated attribute; first value kept")
            )
        else:
            fields[name] = attr.value

    kwargs: dict = {
        "id": fields["id"],
        "created": model.parse_timestamp(fields["created"]),
        "modified": model.parse_timestamp(fields["modified"]),
        "revoked": fields["revoked"] == "true",
        "creator": fields["creator"],
        "playbook_standard": fields["playbook_standard"],
        "playbook_abstraction": fields["playbook_abstraction"],
        "playbook_type": frozenset(fields["playbook_type"]),
    }
    if "valid_from" in fields:
        kwargs["valid_from"] = model.parse_timestamp(fields["valid_from"])
    if "valid_until" in fields:
        kwargs["valid_until"] = model.parse_timestamp(fields["valid_until"])
    if "description" in fields:
        kwargs["description"] = fields["description"]
    kwargs["label"] = frozenset(fields.get("label", ()))
    kwargs["organization_type"] = frozenset(fields.get("organization_type", ()))
    for name in ("impact", "severity", "priority"):
        if name in fields:
            kwargs[name] = int(fields[name])
    if "playbook" in fields:
        kwargs["playbook"] = model.decode_base64(fields["playbook"])
    if "playbook_base64" in fields:
        kwargs["playbook_base64"] = fields["playbook_base64"]

    return PlaybookEnvelope(**kwargs), tuple(warnings)


# --- legacy course-of-action downgrade ------------------------------------

COA_LEVELS = ("High", "Medium", "Low", "None", "Unknown")
COA_STAGES = ("Remedy", "Response", "Further Analysis Required")
COA_TYPES = (
    "Perimeter Blocking",
    "Internal Blocking",
    "Redirection",
    "Redirection (Honey Pot)",
    "Hardening",
    "Patching",
    "Eradication",
    "Rebuilding",
    "Training",
    "Monitoring",
    "Physical Access Restrictions",
    "Logical Access Restrictions",
    "Public Disclosure",
    "Diplomatic Actions",
    "Policy Actions",
    "Other",
)

# Most action-committing playbook type decides the lifecycle stage.
_STAGE_PRECEDENCE = (
    ("Remediation", "Remedy"),
    ("Prevention", "Response"),
    ("Mitigation", "Response"),
    ("Notification", "Response"),
    ("Attack", "Response"),
    ("Detection", "Further Analysis Required"),
    ("Investigation", "Further Analysis Required"),
)


@dataclass(frozen=True)
class MispCoaObject:
    name: str
    description: str
    objective: str
    cost: str
    efficacy: str
    impact: str
    stage: str
    type: str

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "objective": self.objective,
            "cost": self.cost,
            "efficacy": self.efficacy,
            "impact": self.impact,
            "stage": self.stage,
            "type": self.type,
        }

    def to_json(self, pretty: bool = False) -> str:
        return model.dump_json(self.to_dict(), pretty=pretty)


def coarse_impact(score: int) -> str:
    """0..100 score to the coarse vocabulary; 0 means undefined."""
    if score == 0:
        return "Unknown"
    if score <= 33:
        return "Low"
    if score <= 66:
        return "Medium"
    return "High"


def downgrade_to_coa(env: PlaybookEnvelope) -> MispCoaObject:
    """Lossy mapping onto the legacy course-of-action object."""
    report = model.validate_envelope(env)
    if not report.ok:
        raise InvalidEnvelope(report)
    stage = "Response"
    for playbook_type, mapped in _STAGE_PRECEDENCE:
        if playbook_type in env.playbook_type:
            stage = mapped
            break
    return MispCoaObject(
        name=min(env.label) if env.label else env.id,
        description=env.description or "",
        objective="",
        cost="Unknown",
        efficacy="Unknown",
        impact=coarse_impact(env.impact),
        stage=stage,
        type="Other",
    )
