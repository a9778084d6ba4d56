"""Command-line frontend.

Machine-readable output goes to stdout (JSON, except `convert --to ttl`,
which emits Turtle); human diagnostics go to stderr. Exit codes: 0 success,
1 validation failure, 2 usage error, 3 I/O error. Generated values can be
pinned with --now/--uuid for reproducible pipelines.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import uuid
from collections.abc import Mapping
from pathlib import Path

from . import cacao, misp, model, ontology, stix, sync
from .errors import (
    BindFailure,
    InvalidDoc,
    InvalidEnvelope,
    MalformedBundle,
    MalformedEnvelope,
    MissingRequired,
    NotAPlaybook,
    NotFound,
    NotJson,
    PlaybookError,
    ResultInvalid,
    StoreLocked,
)
from .model import Finding, PlaybookEnvelope, SEVERITY_ERROR, ValidationReport
from .store import ORIGIN_LOCAL, PlaybookStore, QueryFilter
from .sync import SyncBundle

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_USAGE = 2
EXIT_IO = 3

DEFAULT_STORE = os.environ.get("PLAYBOOK_STORE", "store")


def _emit(payload) -> None:
    sys.stdout.write(model.dump_json(payload, pretty=True))


def _emit_report(report: ValidationReport) -> None:
    _emit(report.to_dict())
    for finding in report.findings:
        print(f"[{finding.severity}] {finding.path}: {finding.message}", file=sys.stderr)


class _Context:
    def __init__(self, args):
        self.clock = (lambda: args.now) if args.now else model.utc_now
        self.uuid_source = (lambda: args.uuid) if args.uuid else uuid.uuid4
        self.store_dir = getattr(args, "store", DEFAULT_STORE)

    def open_store(self, read_only: bool = False) -> PlaybookStore:
        return PlaybookStore(self.store_dir, read_only=read_only)


def _read_bytes(path: str) -> bytes:
    return Path(path).read_bytes()


# --- subcommand handlers ----------------------------------------------------

def _cmd_validate(args, ctx) -> int:
    data = _read_bytes(args.file)
    if args.cacao:
        try:
            doc = cacao.parse_cacao(data)
        except (NotJson, NotAPlaybook, MissingRequired) as exc:
            report = ValidationReport((Finding("$", SEVERITY_ERROR, str(exc)),))
        else:
            report = cacao.validate_cacao(doc)
    else:
        try:
            parsed = json.loads(data)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            parsed = None
            report = ValidationReport((Finding("$", SEVERITY_ERROR, f"not valid JSON: {exc}"),))
        if parsed is not None:
            if isinstance(parsed, Mapping):
                report = model.validate_envelope(parsed)
            else:
                report = ValidationReport((Finding("$", SEVERITY_ERROR, "not a JSON object"),))
    _emit_report(report)
    return EXIT_OK if report.ok else EXIT_INVALID


def _cmd_wrap(args, ctx) -> int:
    data = _read_bytes(args.file)
    doc = cacao.parse_cacao(data)
    env, warnings = cacao.derive_envelope(
        doc, data, uuid_source=ctx.uuid_source, abstraction=args.abstraction
    )
    for finding in warnings:
        print(f"[{finding.severity}] {finding.path}: {finding.message}", file=sys.stderr)
    _emit(env.to_dict())
    return EXIT_OK


def _cmd_encode(args, ctx) -> int:
    env = PlaybookEnvelope.from_json(_read_bytes(args.file))
    _emit(model.encode_body(env).to_dict())
    return EXIT_OK


def _cmd_decode(args, ctx) -> int:
    env = PlaybookEnvelope.from_json(_read_bytes(args.file))
    _emit(model.decode_body(env).to_dict())
    return EXIT_OK


def _parse_rel(spec_text: str) -> ontology.RelationshipAssertion:
    parts = spec_text.split("=", 2)
    if len(parts) != 3:
        raise _UsageError(f"--rel must be predicate=class=iri, got {spec_text!r}")
    return ontology.RelationshipAssertion(*parts)


def _cmd_convert(args, ctx) -> int:
    env = PlaybookEnvelope.from_json(_read_bytes(args.file))
    if args.to == "misp":
        _emit(misp.to_misp_object(env).to_dict())
    elif args.to == "misp-coa":
        _emit(misp.downgrade_to_coa(env).to_dict())
    elif args.to == "stix":
        _emit(stix.to_stix_coa(env).to_dict())
    else:  # ttl
        rels = [_parse_rel(text) for text in args.rel]
        graph = ontology.to_rdf(env, rels)
        sys.stdout.write(ontology.serialize_turtle(graph))
    return EXIT_OK


def _query_from_args(args, include_revoked_default: bool = False) -> QueryFilter:
    include_revoked = include_revoked_default
    if getattr(args, "include_revoked", False):
        include_revoked = True
    if getattr(args, "exclude_revoked", False):
        include_revoked = False
    return QueryFilter(
        label=args.label,
        playbook_type=frozenset(args.type or ()),
        playbook_standard=args.standard,
        creator=args.creator,
        valid_at=args.valid_at,
        include_revoked=include_revoked,
        text=args.text,
    )


def _cmd_store_add(args, ctx) -> int:
    env = PlaybookEnvelope.from_json(_read_bytes(args.file))
    with ctx.open_store() as store:
        outcome = store.put_envelope(env, origin=ORIGIN_LOCAL, clock=ctx.clock)
    _emit({"outcome": outcome, "id": env.id, "modified": model.format_timestamp(env.modified)})
    return EXIT_OK


def _cmd_store_get(args, ctx) -> int:
    with ctx.open_store(read_only=True) as store:
        record = store.get(args.id)
    _emit(record.to_dict())
    return EXIT_OK


def _cmd_store_history(args, ctx) -> int:
    with ctx.open_store(read_only=True) as store:
        records = store.history(args.id)
    _emit([rec.to_dict() for rec in records])
    return EXIT_OK


def _cmd_store_search(args, ctx) -> int:
    with ctx.open_store(read_only=True) as store:
        records = store.search(_query_from_args(args))
    _emit([rec.to_dict() for rec in records])
    return EXIT_OK


def _cmd_store_revoke(args, ctx) -> int:
    with ctx.open_store() as store:
        head = store.get(args.id)
        revoked = model.revoke(head.envelope, clock=ctx.clock)
        store.put_envelope(revoked, origin=ORIGIN_LOCAL, clock=ctx.clock)
        record = store.get(args.id)
    _emit(record.to_dict())
    return EXIT_OK


def _cmd_bundle_export(args, ctx) -> int:
    with ctx.open_store(read_only=True) as store:
        bundle = sync.export_bundle(
            store,
            _query_from_args(args, include_revoked_default=True),
            producer=args.producer,
            clock=ctx.clock,
            uuid_source=ctx.uuid_source,
        )
    text = bundle.to_json(pretty=True)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        _emit({"written": args.out, "records": len(bundle.records)})
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_bundle_import(args, ctx) -> int:
    bundle = SyncBundle.from_json(_read_bytes(args.file))
    with ctx.open_store() as store:
        report = sync.import_bundle(store, bundle, clock=ctx.clock)
    _emit(report.to_dict())
    return EXIT_OK


def _cmd_serve(args, ctx) -> int:
    with ctx.open_store() as store:
        service = sync.serve(store, args.bind)
        _emit({"serving": args.bind, "store": str(ctx.store_dir)})
        sys.stdout.flush()
        host, port = service.address
        print(f"listening on {host}:{port}, store at {ctx.store_dir}", file=sys.stderr)
        try:
            service.thread.join()
        except KeyboardInterrupt:
            print("shutting down", file=sys.stderr)
            service.shutdown()
    return EXIT_OK


# --- parser ------------------------------------------------------------------

class _UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pbmeta",
        description="Manage, validate, convert, store, and share security playbook metadata.",
    )
    parser.add_argument("--now", type=model.parse_timestamp, default=None,
                        help="pin the clock (RFC 3339 UTC) for generated timestamps")
    parser.add_argument("--uuid", type=uuid.UUID, default=None,
                        help="pin the uuid source for generated identifiers")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate an envelope (or CACAO doc) file")
    p.add_argument("file")
    p.add_argument("--cacao", action="store_true", help="treat the file as a CACAO playbook")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("wrap", help="derive an envelope from a CACAO playbook")
    p.add_argument("file")
    p.add_argument("--cacao", action="store_true", required=True,
                   help="required marker: the input is a CACAO playbook")
    p.add_argument("--abstraction", choices=model.ABSTRACTION_LEVELS, default="Executable")
    p.set_defaults(func=_cmd_wrap)

    p = sub.add_parser("encode", help="fill playbook_base64 from the raw body")
    p.add_argument("file")
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("decode", help="fill the raw body from playbook_base64")
    p.add_argument("file")
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("convert", help="convert an envelope to another representation")
    p.add_argument("file")
    p.add_argument("--to", required=True, choices=("misp", "misp-coa", "stix", "ttl"))
    p.add_argument("--rel", action="append", default=[], metavar="PREDICATE=CLASS=IRI",
                   help="relationship assertion for ttl output (repeatable)")
    p.set_defaults(func=_cmd_convert)

    store_parser = sub.add_parser("store", help="operate on the local knowledge base")
    store_parser.add_argument("--store", default=DEFAULT_STORE, help="store directory")
    store_sub = store_parser.add_subparsers(dest="store_command", required=True)

    p = store_sub.add_parser("add", help="insert an envelope version")
    p.add_argument("file")
    p.set_defaults(func=_cmd_store_add)

    p = store_sub.add_parser("get", help="print the latest version of an id")
    p.add_argument("id")
    p.set_defaults(func=_cmd_store_get)

    p = store_sub.add_parser("history", help="print all versions of an id")
    p.add_argument("id")
    p.set_defaults(func=_cmd_store_history)

    p = store_sub.add_parser("search", help="search latest versions")
    _add_filter_flags(p)
    p.set_defaults(func=_cmd_store_search)

    p = store_sub.add_parser("revoke", help="revoke the latest version of an id")
    p.add_argument("id")
    p.set_defaults(func=_cmd_store_revoke)

    bundle_parser = sub.add_parser("bundle", help="export/import exchange bundles")
    bundle_parser.add_argument("--store", default=DEFAULT_STORE, help="store directory")
    bundle_sub = bundle_parser.add_subparsers(dest="bundle_command", required=True)

    p = bundle_sub.add_parser("export", help="export matching history chains")
    _add_filter_flags(p)
    p.add_argument("--exclude-revoked", action="store_true",
                   help="drop chains whose head is revoked (kept by default)")
    p.add_argument("--producer", default=ORIGIN_LOCAL)
    p.add_argument("--out", default=None, help="write the bundle to a file instead of stdout")
    p.set_defaults(func=_cmd_bundle_export)

    p = bundle_sub.add_parser("import", help="merge a bundle into the store")
    p.add_argument("file")
    p.set_defaults(func=_cmd_bundle_import)

    p = sub.add_parser("serve", help="run the HTTP exchange service")
    p.add_argument("--bind", default="127.0.0.1:8727", help="host:port to listen on")
    p.add_argument("--store", default=DEFAULT_STORE, help="store directory")
    p.set_defaults(func=_cmd_serve)

    return parser


def _add_filter_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--type", action="append", default=None,
                   help="playbook type, any-of when repeated")
    p.add_argument("--label", default=None, help="tag that must be present")
    p.add_argument("--standard", default=None, help="exact playbook_standard")
    p.add_argument("--creator", default=None, help="exact creator")
    p.add_argument("--valid-at", dest="valid_at", type=model.parse_timestamp, default=None,
                   help="only envelopes valid at this time")
    p.add_argument("--include-revoked", action="store_true")
    p.add_argument("--text", default=None, help="substring of description")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    ctx = _Context(args)
    try:
        return args.func(args, ctx)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MalformedEnvelope as exc:
        report = ValidationReport(tuple(exc.findings))
        _emit_report(report)
        return EXIT_INVALID
    except (InvalidEnvelope, ResultInvalid) as exc:
        _emit_report(exc.report)
        return EXIT_INVALID
    except InvalidDoc as exc:
        if exc.report is not None:
            _emit_report(exc.report)
        else:
            _emit({"error": "invalid_doc", "detail": str(exc)})
            print(f"invalid document: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NotFound as exc:
        _emit({"error": "not_found", "detail": str(exc)})
        print(f"not found: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (BindFailure, StoreLocked) as exc:
        _emit({"error": type(exc).__name__.lower(), "detail": str(exc)})
        print(str(exc), file=sys.stderr)
        return EXIT_IO
    except MalformedBundle as exc:
        _emit({"error": "malformed_bundle", "detail": str(exc)})
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    except PlaybookError as exc:
        _emit({"error": _snake(type(exc).__name__), "detail": str(exc)})
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        _emit({"error": "io", "detail": str(exc)})
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def _snake(name: str) -> str:
    out = []
    for i, ch in enumerate(name):
        if ch.isupper() and i:
            out.append("_")
        out.append(ch.lower())
    return "".join(out)


def entry() -> None:
    sys.exit(main())
