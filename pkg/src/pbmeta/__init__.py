"""Security playbook metadata toolkit.

A uniform metadata envelope for security playbooks of any standard, with
structural CACAO validation, conversions to MISP objects, STIX 2.1
course-of-action records, and RDF, plus a versioned, queryable,
synchronizable knowledge base and a CLI over all of it.
"""

from .cacao import CacaoDoc, WorkflowStep, derive_envelope, parse_cacao, validate_cacao
from .errors import PlaybookError
from .misp import MispCoaObject, MispObject, downgrade_to_coa, from_misp_object, to_misp_object
from .model import (
    Finding,
    PlaybookEnvelope,
    ValidationReport,
    decode_body,
    encode_body,
    is_valid_at,
    new_envelope,
    revise,
    revoke,
    validate_envelope,
)
from .ontology import RelationshipAssertion, TripleGraph, parse_turtle, serialize_turtle, to_rdf
from .stix import StixCoaRecord, from_stix_coa, to_stix_coa
from .store import PlaybookStore, QueryFilter, StoreRecord
from .sync import ImportReport, SyncBundle, export_bundle, import_bundle, serve

__version__ = "0.1.0"

__all__ = [
    "CacaoDoc",
    "Finding",
    "ImportReport",
    "MispCoaObject",
    "MispObject",
    "PlaybookEnvelope",
    "PlaybookError",
    "PlaybookStore",
    "QueryFilter",
    "RelationshipAssertion",
    "StixCoaRecord",
    "StoreRecord",
    "SyncBundle",
    "TripleGraph",
    "ValidationReport",
    "WorkflowStep",
    "decode_body",
    "derive_envelope",
    "downgrade_to_coa",
    "encode_body",
    "export_bundle",
    "from_misp_object",
    "from_stix_coa",
    "import_bundle",
    "is_valid_at",
    "new_envelope",
    "parse_cacao",
    "parse_turtle",
    "revise",
    "revoke",
    "serialize_turtle",
    "serve",
    "to_misp_object",
    "to_rdf",
    "to_stix_coa",
    "validate_cacao",
    "validate_envelope",
]
