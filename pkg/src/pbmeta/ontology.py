"""RDF view of envelopes: playbook individuals plus semantic relationships.

Graphs are plain triple sets with typed literals, serialized as Turtle with
a fixed prefix block and lexicographically sorted statements so identical
graphs always produce identical bytes. The bundled Turtle parser understands
exactly the subset this serializer emits; it exists for round-trip checking,
not as a general RDF reader.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import model
from .errors import DisallowedRelationship, InvalidEnvelope
from .model import PlaybookEnvelope

DEFAULT_NAMESPACE = "https://example.org/security-playbook#"
RDF_TYPE = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type"
RDF_NS = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
XSD_NS = "http://www.w3.org/2001/XMLSchema#"

PLAYBOOK_CLASS = "SecurityPlaybook"

TARGET_CLASSES = (
    "AttackPattern",
    "Indicator",
    "Malware",
    "Tool",
    "Vulnerability",
    "CourseOfAction",
)

# predicate -> target classes it may point at
ALLOWED_RELATIONSHIPS = {
    "mitigates": frozenset({"AttackPattern", "Indicator", "Malware", "Tool", "Vulnerability"}),
    "remediates": frozenset({"Malware", "Vulnerability"}),
    "investigates": frozenset({"Indicator"}),
    "relatedTo": frozenset(TARGET_CLASSES),
}

_IRI_RE = re.compile(r'^[^\s<>"{}|\\^`]+$')


@dataclass(frozen=True)
class RelationshipAssertion:
    predicate: str
    target_class: str
    target_iri: str


def check_relationship(rel: RelationshipAssertion) -> None:
    allowed = ALLOWED_RELATIONSHIPS.get(rel.predicate)
    if allowed is None:
        raise DisallowedRelationship(
            f"unknown predicate {rel.predicate!r}; allowed: {', '.join(sorted(ALLOWED_RELATIONSHIPS))}"
        )
    if rel.target_class not in allowed:
        raise DisallowedRelationship(
            f"{rel.predicate} may not point at {rel.target_class}; allowed: {', '.join(sorted(allowed))}"
        )
    if not _IRI_RE.match(rel.target_iri):
        raise DisallowedRelationship(f"target_iri is not a usable IRI: {rel.target_iri!r}")


@dataclass(frozen=True)
class Literal:
    lexical: str
    datatype: str  # string | boolean | integer | dateTime


Triple = tuple  # (subject IRI, predicate IRI, object IRI-or-Literal)


@dataclass(frozen=True)
class TripleGraph:
    namespace: str
    triples: frozenset

    def __len__(self) -> int:
        return len(self.triples)


_SCALAR_DATATYPES = {
    "id": "string",
    "created": "dateTime",
    "modified": "dateTime",
    "revoked": "boolean",
    "creator": "string",
    "valid_from": "dateTime",
    "valid_until": "dateTime",
    "description": "string",
    "impact": "integer",
    "severity": "integer",
    "priority": "integer",
    "playbook_standard": "string",
    "playbook_abstraction": "string",
    "playbook": "string",
    "playbook_base64": "string",
}

_SET_FIELDS = ("label", "organization_type", "playbook_type")


def to_rdf(
    env: PlaybookEnvelope,
    rels: list[RelationshipAssertion] | tuple = (),
    namespace: str = DEFAULT_NAMESPACE,
) -> TripleGraph:
    """Build the triple set for one envelope.

    Emits one rdf:type triple, one datatype-property triple per populated
    scalar field (scores of 0 count as unpopulated), one triple per set
    element, and one object-property triple per relationship assertion.
    """
    report = model.validate_envelope(env)
    if not report.ok:
        raise InvalidEnvelope(report)
    for rel in rels:
        check_relationship(rel)

    subject = namespace + env.uuid_part
    triples: set = {(subject, RDF_TYPE, namespace + PLAYBOOK_CLASS)}

    serialized = env.to_dict()
    for name, datatype in _SCALAR_DATATYPES.items():
        if name not in serialized:
            continue
        value = serialized[name]
        lexical = {True: "true", False: "false"}[value] if datatype == "boolean" else str(value)
        triples.add((subject, namespace + name, Literal(lexical, datatype)))

    for name in _SET_FIELDS:
        for value in serialized.get(name, ()):
            triples.add((subject, namespace + name, Literal(value, "string")))

    for rel in rels:
        triples.add((subject, namespace + rel.predicate, rel.target_iri))

    return TripleGraph(namespace=namespace, triples=frozenset(triples))


# --- Turtle ----------------------------------------------------------------

_ESCAPES = [("\\", "\\\\"), ('"', '\\"'), ("\n", "\\n"), ("\r", "\\r"), ("\t", "\\t")]


def _escape(text: str) -> str:
    for plain, escaped in _ESCAPES:
        text = text.replace(plain, escaped)
    return text


def _unescape(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            out.append({"\\": "\\", '"': '"', "n": "\n", "r": "\r", "t": "\t"}.get(nxt, nxt))
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _render_predicate(iri: str, namespace: str) -> str:
    if iri == RDF_TYPE:
        return "rdf:type"
    if iri.startswith(namespace):
        return "pb:" + iri[len(namespace):]
    return f"<{iri}>"


def _render_object(obj, namespace: str) -> str:
    if isinstance(obj, Literal):
        quoted = f'"{_escape(obj.lexical)}"'
        return quoted if obj.datatype == "string" else f"{quoted}^^xsd:{obj.datatype}"
    if obj.startswith(namespace):
        return "pb:" + obj[len(namespace):]
    return f"<{obj}>"


def _sort_key(triple):
    subject, predicate, obj = triple
    if isinstance(obj, Literal):
        return (subject, predicate, f"lit:{obj.datatype}:{obj.lexical}")
    return (subject, predicate, f"iri:{obj}")


def serialize_turtle(graph: TripleGraph) -> str:
    """Byte-stable Turtle: fixed prefix block, sorted full statements."""
    lines = [
        f"@prefix rdf: <{RDF_NS}> .",
        f"@prefix xsd: <{XSD_NS}> .",
        f"@prefix pb: <{graph.namespace}> .",
    ]
    if graph.triples:
        lines.append("")
    for subject, predicate, obj in sorted(graph.triples, key=_sort_key):
        lines.append(
            f"<{subject}> {_render_predicate(predicate, graph.namespace)} "
            f"{_render_object(obj, graph.namespace)} ."
        )
    return "\n".join(lines) + "\n"


_STATEMENT_RE = re.compile(
    r"^<(?P<subject>[^>]+)>\s+(?P<predicate>rdf:type|pb:\S+|<[^>]+>)\s+(?P<object>.+?)\s+\.$"
)
_LITERAL_RE = re.compile(r'^"(?P<lexical>(?:[^"\\]|\\.)*)"(?:\^\^xsd:(?P<datatype>\w+))?$')


def parse_turtle(text: str) -> TripleGraph:
    """Parse Turtle produced by serialize_turtle (and nothing fancier)."""
    namespace = DEFAULT_NAMESPACE
    triples: set = set()
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("@prefix"):
            match = re.match(r"^@prefix\s+pb:\s+<([^>]+)>\s+\.$", line)
            if match:
                namespace = match.group(1)
            continue
        match = _STATEMENT_RE.match(line)
        if not match:
            raise ValueError(f"unparseable Turtle statement: {line!r}")
        subject = match.group("subject")
        predicate = match.group("predicate")
        if predicate == "rdf:type":
            predicate_iri = RDF_TYPE
        elif predicate.startswith("pb:"):
            predicate_iri = namespace + predicate[3:]
        else:
            predicate_iri = predicate[1:-1]
        obj_text = match.group("object")
        literal = _LITERAL_RE.match(obj_text)
        if literal:
            obj = Literal(_unescape(literal.group("lexical")), literal.group("datatype") or "string")
        elif obj_text.startswith("pb:"):
            obj = namespace + obj_text[3:]
        elif obj_text.startswith("<") and obj_text.endswith(">"):
            obj = obj_text[1:-1]
        else:
            raise ValueError(f"unparseable Turtle object: {obj_text!r}")
        triples.add((subject, predicate_iri, obj))
    return TripleGraph(namespace=namespace, triples=frozenset(triples))
