"""Structural model of CACAO JSON playbooks.

Parsing is deliberately shallow: it checks the minimal skeleton (document
metadata plus the workflow step graph) and carries everything else opaquely
so re-serialization loses nothing. Deep conformance checking of commands,
targets, markings, extensions, and signatures is out of scope; those are
shape-checked only.
"""

from __future__ import annotations

import copy
import json
from collections.abc import Mapping
from dataclasses import dataclass, field

from . import model
from .errors import (
    InvalidDoc,
    MalformedTimestamp,
    MissingRequired,
    NotAPlaybook,
    NotJson,
    UnmappableTimestamp,
)
from .model import (
    Finding,
    PlaybookEnvelope,
    SEVERITY_ERROR,
    SEVERITY_WARNING,
    UuidSource,
    ValidationReport,
)

REQUIRED_DOC_FIELDS = (
    "type",
    "spec_version",
    "id",
    "name",
    "created",
    "modified",
    "workflow_start",
    "workflow",
)

# Step fields whose values name successor steps. Single-valued keys also
# tolerate lists, absorbing vocabulary drift between playbook spec revisions.
SINGLE_SUCCESSOR_KEYS = ("on_completion", "on_success", "on_failure", "on_true", "on_false")

_KNOWN_DOC_FIELDS = REQUIRED_DOC_FIELDS + (
    "description",
    "revoked",
    "valid_from",
    "valid_until",
    "playbook_types",
    "labels",
    "priority",
    "severity",
    "impact",
    "created_by",
    "targets",
    "data_marking_definitions",
    "extension_definitions",
    "signatures",
)


@dataclass(frozen=True)
class WorkflowStep:
    """One workflow step: its type, outgoing references, and opaque payload."""

    step_type: str
    successors: tuple[tuple[str, str], ...]  # (field label, referenced step id)
    commands: tuple | None
    targets: tuple[str, ...]
    raw: Mapping

    @property
    def successor_ids(self) -> tuple[str, ...]:
        return tuple(ref for _, ref in self.successors)


@dataclass(frozen=True)
class CacaoDoc:
    """Parsed playbook document; `raw` retains the full original JSON."""

    raw: Mapping
    spec_version: str
    id: str
    name: str
    workflow_start: str
    workflow: Mapping[str, WorkflowStep]
    description: str | None = None
    created: str = ""
    modified: str = ""
    revoked: bool | None = None
    valid_from: str | None = None
    valid_until: str | None = None
    playbook_types: tuple = ()
    labels: tuple = ()
    priority: object = None
    severity: object = None
    impact: object = None
    created_by: str | None = None
    signatures: tuple = ()
    extras: Mapping = field(default_factory=dict)

    def to_dict(self) -> dict:
        return copy.deepcopy(dict(self.raw))

    def to_json(self, pretty: bool = False) -> str:
        return model.dump_json(self.to_dict(), pretty=pretty)


def _extract_successors(step: Mapping) -> tuple[tuple[str, str], ...]:
    refs: list[tuple[str, str]] = []

    def add(label: str, value: object) -> None:
        if isinstance(value, str):
            refs.append((label, value))
        elif isinstance(value, list):
            for i, item in enumerate(value):
                if isinstance(item, str):
                    refs.append((f"{label}[{i}]", item))

    for key in SINGLE_SUCCESSOR_KEYS:
        if key in step:
            add(key, step[key])
    if "next_steps" in step:
        add("next_steps", step["next_steps"])
    cases = step.get("cases")
    if isinstance(cases, Mapping):
        for case, value in cases.items():
            add(f"cases[{case}]", value)
    return tuple(refs)


def _parse_step(raw: object) -> WorkflowStep:
    if not isinstance(raw, Mapping):
        return WorkflowStep(step_type="", successors=(), commands=None, targets=(), raw={})
    commands = None
    if "commands" in raw:
        value = raw["commands"]
        if isinstance(value, list):
            commands = tuple(
                (item.get("type", ""), item.get("command", ""))
                if isinstance(item, Mapping)
                else ("", "")
                for item in value
            )
        else:
            commands = ()  # wrong shape; validate_cacao reports it
    targets = raw.get("targets")
    target_refs = tuple(t for t in targets if isinstance(t, str)) if isinstance(targets, list) else ()
    return WorkflowStep(
        step_type=str(raw.get("type", "")),
        successors=_extract_successors(raw),
        commands=commands,
        targets=target_refs,
        raw=raw,
    )


def parse_cacao(data: bytes | str) -> CacaoDoc:
    """Parse playbook JSON into the structural model.

    Raises NotJson for undecodable input, NotAPlaybook when the document is
    not a playbook object, and MissingRequired when skeleton fields are
    absent (or not of a usable JSON type, which amounts to the same thing).
    """
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise NotJson(f"input is not UTF-8: {exc}") from None
    try:
        raw = json.loads(data)
    except json.JSONDecodeError as exc:
        raise NotJson(f"input is not JSON: {exc}") from None
    if not isinstance(raw, Mapping):
        raise NotAPlaybook("top-level JSON value is not an object")
    doc_type = raw.get("type")
    if doc_type != "playbook":
        raise NotAPlaybook(f"type is {doc_type!r}, expected 'playbook'")

    missing = [name for name in REQUIRED_DOC_FIELDS if name not in raw]
    for name in ("spec_version", "id", "name", "created", "modified", "workflow_start"):
        if name in raw and not isinstance(raw[name], str):
            missing.append(name)
    if "workflow" in raw and not isinstance(raw["workflow"], Mapping):
        missing.append("workflow")
    if missing:
        raise MissingRequired(sorted(set(missing)))

    workflow = {str(k): _parse_step(v) for k, v in raw["workflow"].items()}

    def opt_str(name: str) -> str | None:
        value = raw.get(name)
        return value if isinstance(value, str) else None

    return CacaoDoc(
        raw=raw,
        spec_version=raw["spec_version"],
        id=raw["id"],
        name=raw["name"],
        created=raw["created"],
        modified=raw["modified"],
        workflow_start=raw["workflow_start"],
        workflow=workflow,
        description=opt_str("description"),
        revoked=raw["revoked"] if isinstance(raw.get("revoked"), bool) else None,
        valid_from=opt_str("valid_from"),
        valid_until=opt_str("valid_until"),
        playbook_types=tuple(raw["playbook_types"]) if isinstance(raw.get("playbook_types"), list) else (),
        labels=tuple(raw["labels"]) if isinstance(raw.get("labels"), list) else (),
        priority=raw.get("priority"),
        severity=raw.get("severity"),
        impact=raw.get("impact"),
        created_by=opt_str("created_by"),
        signatures=tuple(raw["signatures"]) if isinstance(raw.get("signatures"), list) else (),
        extras={k: v for k, v in raw.items() if k not in _KNOWN_DOC_FIELDS},
    )


def reachable_steps(doc: CacaoDoc) -> frozenset[str]:
    """Step ids reachable from workflow_start by following successor refs."""
    if doc.workflow_start not in doc.workflow:
        return frozenset()
    seen: set[str] = set()
    stack = [doc.workflow_start]
    while stack:
        current = stack.pop()
        if current in seen:
            continue
        seen.add(current)
        for ref in doc.workflow[current].successor_ids:
            if ref in doc.workflow and ref not in seen:
                stack.append(ref)
    return frozenset(seen)


def validate_cacao(doc: CacaoDoc) -> ValidationReport:
    """Check workflow-graph integrity and the shape of opaque components.

    Dangling references and an empty workflow are errors; steps that can
    never execute are warnings. When the workflow is empty, or the start
    step is itself dangling, dependent findings are suppressed rather than
    cascading over every step.
    """
    findings: list[Finding] = []

    if not doc.workflow:
        findings.append(Finding("workflow", SEVERITY_ERROR, "workflow is empty"))
        return ValidationReport(tuple(findings))

    start_ok = doc.workflow_start in doc.workflow
    if not start_ok:
        findings.append(
            Finding(
                "workflow_start",
                SEVERITY_ERROR,
                f"dangling workflow_start: {doc.workflow_start!r}",
            )
        )

    for sid in sorted(doc.workflow):
        step = doc.workflow[sid]
        if not step.raw:
            findings.append(Finding(f"workflow.{sid}", SEVERITY_ERROR, "step must be an object"))
            continue
        for label, ref in sorted(step.successors):
            if ref not in doc.workflow:
                findings.append(
                    Finding(
                        f"workflow.{sid}.{label}",
                        SEVERITY_ERROR,
                        f"dangling reference: {ref!r}",
                    )
                )
        if step.commands is not None:
            raw_commands = step.raw.get("commands")
            if not isinstance(raw_commands, list):
                findings.append(
                    Finding(f"workflow.{sid}.commands", SEVERITY_ERROR, "commands must be a list")
                )
            elif not raw_commands:
                findings.append(
                    Finding(
                        f"workflow.{sid}.commands",
                        SEVERITY_ERROR,
                        "commands must be non-empty when present",
                    )
                )

    for name in ("targets", "data_marking_definitions", "extension_definitions"):
        if name in doc.raw and not isinstance(doc.raw[name], Mapping):
            findings.append(Finding(name, SEVERITY_ERROR, "must be an object"))
    if "signatures" in doc.raw and not isinstance(doc.raw["signatures"], list):
        findings.append(Finding("signatures", SEVERITY_ERROR, "must be a list"))

    if start_ok:
        reachable = reachable_steps(doc)
        for sid in sorted(set(doc.workflow) - reachable):
            findings.append(Finding(f"workflow.{sid}", SEVERITY_WARNING, "unreachable step"))

    return ValidationReport(tuple(findings))


def _map_timestamp(value: str, path: str) -> object:
    try:
        return model.parse_timestamp(value)
    except MalformedTimestamp as exc:
        raise UnmappableTimestamp(f"{path}: {exc}") from None


def derive_envelope(
    doc: CacaoDoc,
    body: bytes,
    uuid_source: UuidSource | None = None,
    abstraction: str = "Executable",
) -> tuple[PlaybookEnvelope, tuple[Finding, ...]]:
    """Map document metadata into a fresh envelope around `body`.

    `body` must be the source bytes of `doc`. The document id is kept as a
    `cacao-id:` label for traceability; playbook type values that do not
    match the envelope vocabulary are preserved as labels and reported as
    warnings, as are scores that are unusable as 0..100 integers.
    """
    if abstraction not in model.ABSTRACTION_LEVELS:
        raise ValueError(f"abstraction must be one of {model.ABSTRACTION_LEVELS}")
    report = validate_cacao(doc)
    if not report.ok:
        raise InvalidDoc("document fails structural validation", report)
    try:
        if json.loads(body) != doc.raw:
            raise InvalidDoc("body bytes do not match the document")
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise InvalidDoc("body bytes do not match the document") from None

    warnings: list[Finding] = []

    def warn(path: str, message: str) -> None:
        warnings.append(Finding(path, SEVERITY_WARNING, message))

    created = _map_timestamp(doc.created, "created")
    modified = _map_timestamp(doc.modified, "modified")
    if modified < created:
        warn("modified", "precedes created; raised to created")
        modified = created
    valid_from = _map_timestamp(doc.valid_from, "valid_from") if doc.valid_from else None
    valid_until = _map_timestamp(doc.valid_until, "valid_until") if doc.valid_until else None
    if valid_from is not None and valid_until is not None and valid_from > valid_until:
        warn("valid_until", "precedes valid_from; dropped")
        valid_until = None

    labels: set[str] = set()
    for value in doc.labels:
        if not isinstance(value, str):
            warn("labels", f"ignored non-string label: {value!r}")
            continue
        value = value.strip()
        if value:
            labels.add(value)
        else:
            warn("labels", "ignored blank label")

    canonical = {name.lower(): name for name in model.PLAYBOOK_TYPES}
    types: set[str] = set()
    for value in doc.playbook_types:
        if not isinstance(value, str):
            warn("playbook_types", f"ignored non-string type: {value!r}")
            continue
        mapped = canonical.get(value.strip().lower())
        if mapped:
            types.add(mapped)
        else:
            labels.add(value.strip())
            warn("playbook_types", f"unmappable type kept as label: {value!r}")
    if not types:
        raise InvalidDoc("no mappable playbook_types values")

    def score(value: object, path: str) -> int:
        if value is None:
            return 0
        if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value <= 100:
            warn(path, f"unusable score treated as undefined: {value!r}")
            return 0
        return value

    labels.add(f"cacao-id:{doc.id}")

    if doc.created_by and doc.created_by.strip():
        creator = doc.created_by
    else:
        creator = "unknown"
        warn("created_by", "absent; creator set to 'unknown'")

    env = PlaybookEnvelope(
        id=model.new_playbook_id(uuid_source),
        created=created,
        modified=modified,
        revoked=bool(doc.revoked),
        creator=creator,
        valid_from=valid_from,
        valid_until=valid_until,
        description=doc.description,
        label=frozenset(labels),
        impact=score(doc.impact, "impact"),
        severity=score(doc.severity, "severity"),
        priority=score(doc.priority, "priority"),
        playbook_type=frozenset(types),
        playbook_standard="cacao",
        playbook_abstraction=abstraction,
        playbook=bytes(body),
    )
    return env, tuple(warnings)
