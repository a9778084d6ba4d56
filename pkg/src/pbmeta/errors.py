"""Exception hierarchy shared across the package.

Every error raised by pbmeta derives from PlaybookError so callers can
catch the whole family with one clause. Errors that argparse may hit while
converting flag values additionally subclass ValueError.
"""

from __future__ import annotations


class PlaybookError(Exception):
    """Base class for all pbmeta errors."""


# --- envelope / model ---------------------------------------------------

class MalformedTimestamp(PlaybookError, ValueError):
    """Value is not an RFC 3339 UTC timestamp."""


class MalformedEnvelope(PlaybookError):
    """Envelope JSON is structurally unusable (wrong types, missing fields)."""

    def __init__(self, findings):
        self.findings = tuple(findings)
        detail = "; ".join(f"{f.path}: {f.message}" for f in self.findings)
        super().__init__(f"malformed envelope: {detail}")


class EmptyTypeSet(PlaybookError):
    """A new envelope needs at least one playbook type."""


class EmptyBody(PlaybookError):
    """A new envelope needs a non-empty playbook body."""


class IllegalFieldChange(PlaybookError):
    """Attempt to revise an immutable envelope field (id, created)."""


class ResultInvalid(PlaybookError):
    """An operation produced an envelope that fails validation."""

    def __init__(self, report):
        self.report = report
        errors = [f for f in report.findings if f.severity == "error"]
        detail = "; ".join(f"{f.path}: {f.message}" for f in errors)
        super().__init__(f"result fails validation: {detail}")


class AlreadyRevoked(PlaybookError):
    """The envelope is already revoked."""


class MissingBody(PlaybookError):
    """encode_body needs the raw playbook body to be present."""


class MalformedBase64(PlaybookError, ValueError):
    """Value is not valid standard base64."""


# --- cacao --------------------------------------------------------------

class NotJson(PlaybookError):
    """Input bytes are not UTF-8 JSON."""


class NotAPlaybook(PlaybookError):
    """JSON parsed, but it is not a playbook document."""


class MissingRequired(PlaybookError):
    """A playbook document lacks required fields."""

    def __init__(self, fields):
        self.fields = tuple(fields)
        super().__init__(f"missing required fields: {', '.join(self.fields)}")


class InvalidDoc(PlaybookError):
    """The playbook document fails structural validation."""

    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


class UnmappableTimestamp(PlaybookError):
    """A document timestamp cannot be mapped into the envelope format."""


# --- conversions --------------------------------------------------------

class InvalidEnvelope(PlaybookError):
    """The envelope fails validation, so conversion/storing is refused."""

    def __init__(self, report):
        self.report = report
        errors = [f for f in report.findings if f.severity == "error"]
        detail = "; ".join(f"{f.path}: {f.message}" for f in errors)
        super().__init__(f"invalid envelope: {detail}")


class WrongObjectName(PlaybookError):
    """MISP object is not a security-playbook object."""


class MissingMandatoryAttribute(PlaybookError):
    """MISP object lacks attributes required to rebuild an envelope."""

    def __init__(self, relations):
        self.relations = tuple(relations)
        super().__init__(f"missing mandatory attributes: {', '.join(self.relations)}")


class WrongType(PlaybookError):
    """STIX record has the wrong type value."""


class MissingExtension(PlaybookError):
    """STIX record does not carry the playbook metadata extension."""


class DisallowedRelationship(PlaybookError):
    """Relationship predicate/target-class pair is not allowed."""


# --- store / sync -------------------------------------------------------

class ConflictingContent(PlaybookError):
    """Same (id, modified) key as a stored version but different content."""


class NotFound(PlaybookError):
    """No record with this id in the store."""


class StoreLocked(PlaybookError):
    """Another process holds the store's writer lock."""


class ReadOnlyStore(PlaybookError):
    """Write attempted through a read-only store handle."""


class MalformedBundle(PlaybookError):
    """Bundle JSON is structurally unusable."""


class BindFailure(PlaybookError):
    """The HTTP service could not bind its address."""
