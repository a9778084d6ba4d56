import json
import random
import urllib.error
import urllib.request

import pytest

from pbmeta import model, sync
from pbmeta.errors import BindFailure, MalformedBundle
from pbmeta.store import PlaybookStore, QueryFilter, StoreRecord
from pbmeta.sync import SyncBundle, export_bundle, import_bundle

from conftest import make_clock, make_uuid_source, random_envelope
from test_model import sample_envelope


@pytest.fixture
def open_store(tmp_path):
    stores = []

    def opener(name):
        st = PlaybookStore(tmp_path / name)
        stores.append(st)
        return st

    yield opener
    for st in stores:
        st.close()


def put(st, env, at="2022-06-01T00:00:00.000Z", origin="local"):
    return st.put(StoreRecord(env, ingested_at=model.parse_timestamp(at), origin=origin))


def head_envelopes(st):
    return {rec.envelope.id: rec.envelope for rec in st.heads()}


# --- bundles -----------------------------------------------------------------

def test_export_empty_store(open_store):
    bundle = export_bundle(open_store("a"), clock=make_clock(), uuid_source=make_uuid_source())
    assert bundle.records == ()
    assert bundle.bundle_id == "00000000-0000-0000-0000-000000000001"
    assert model.format_timestamp(bundle.produced_at) == "2022-01-01T00:00:00.000Z"


def test_export_ships_full_history_chain(open_store):
    st = open_store("a")
    env = sample_envelope()
    v2 = model.revise(env, {"description": "v2"}, clock=make_clock("2022-02-01T00:00:00.000Z"))
    put(st, env)
    put(st, v2)
    bundle = export_bundle(st)
    assert [e.modified for e in bundle.records] == [env.modified, v2.modified]


def test_export_filter_drops_whole_chains(open_store):
    st = open_store("a")
    keep = sample_envelope()
    gone = model.revoke(
        sample_envelope(id="security-playbook--aaaaaaaa-bbbb-cccc-dddd-eeeeeeeeeeee"),
        clock=make_clock("2022-02-01T00:00:00.000Z"),
    )
    put(st, keep)
    put(st, gone)
    bundle = export_bundle(st, QueryFilter(include_revoked=False))
    assert [e.id for e in bundle.records] == [keep.id]
    # the default export keeps revoked chains for replication
    assert len(export_bundle(st).records) == 2


def test_import_own_export_is_all_duplicates(open_store):
    st = open_store("a")
    rng = random.Random(3)
    for _ in range(10):
        put(st, random_envelope(rng))
    report = import_bundle(st, export_bundle(st))
    assert report.duplicates == 10
    assert report.inserted == report.new_versions == report.conflicts == 0


def test_import_skips_invalid_records_as_conflicts(open_store):
    st = open_store("a")
    data = export_bundle(st).to_dict()
    bad = sample_envelope().to_dict() | {"impact": 200}
    good = sample_envelope(id="security-playbook--aaaaaaaa-bbbb-cccc-dddd-eeeeeeeeeeee").to_dict()
    data["records"] = [bad, good]
    report = import_bundle(st, SyncBundle.from_dict(data))
    assert report.conflicts == 1 and report.inserted == 1
    assert set(head_envelopes(st)) == {"security-playbook--aaaaaaaa-bbbb-cccc-dddd-eeeeeeeeeeee"}


def test_import_exact_version_content_clash_keeps_local(open_store):
    st = open_store("a")
    local = sample_envelope(description="local truth")
    put(st, local)
    data = export_bundle(st).to_dict()
    data["records"][0]["description"] = "remote tamper"
    report = import_bundle(st, SyncBundle.from_dict(data))
    assert report.conflicts == 1
    assert st.get(local.id).envelope.description == "local truth"


def test_bidirectional_exchange_converges(open_store):
    rng = random.Random(57)
    a, b = open_store("a"), open_store("b")
    shared = random_envelope(rng)
    put(a, shared)
    put(b, model.revise(shared, {"description": "b wins"},
                        clock=make_clock("2023-01-01T00:00:00.000Z")))
    for _ in range(6):
        put(a, random_envelope(rng))
        put(b, random_envelope(rng))
    import_bundle(b, export_bundle(a))
    import_bundle(a, export_bundle(b))
    assert head_envelopes(a) == head_envelopes(b)
    assert a.get(shared.id).envelope.description == "b wins"
    # second exchange is a no-op
    report = import_bundle(a, export_bundle(b))
    assert report.inserted == report.new_versions == 0


def test_bundle_rejects_structural_garbage():
    with pytest.raises(MalformedBundle):
        SyncBundle.from_json(b"[]")
    with pytest.raises(MalformedBundle):
        SyncBundle.from_json(b'{"bundle_id":"x"}')
    with pytest.raises(MalformedBundle):
        SyncBundle.from_dict(
            {"bundle_id": "x", "produced_at": "2022-01-01T00:00:00.000Z",
             "producer": "p", "records": [{"id": 5}]}
        )


def test_bundle_rejects_duplicate_versions():
    env = sample_envelope()
    data = {
        "bundle_id": "x",
        "produced_at": "2022-01-01T00:00:00.000Z",
        "producer": "p",
        "records": [env.to_dict(), env.to_dict()],
    }
    with pytest.raises(MalformedBundle):
        SyncBundle.from_dict(data)


def test_bundle_json_round_trip(open_store):
    st = open_store("a")
    rng = random.Random(8)
    for _ in range(5):
        put(st, random_envelope(rng))
    bundle = export_bundle(st, clock=make_clock(), uuid_source=make_uuid_source())
    assert SyncBundle.from_json(bundle.to_json()) == bundle


# --- HTTP service ---------------------------------------------------------------

@pytest.fixture
def service(open_store):
    st = open_store("served")
    rng = random.Random(77)
    envs = [random_envelope(rng) for _ in range(8)]
    for env in envs:
        put(st, env)
    handle = sync.serve(st, "127.0.0.1:0")
    yield st, handle, envs
    handle.shutdown()


def _get(handle, path):
    host, port = handle.address
    with urllib.request.urlopen(f"http://{host}:{port}{path}") as resp:
        return resp.status, json.loads(resp.read())


def _post(handle, path, payload) -> tuple[int, dict]:
    host, port = handle.address
    req = urllib.request.Request(
        f"http://{host}:{port}{path}",
        data=json.dumps(payload).encode(),
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(req) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


def test_healthz(service):
    _, handle, _ = service
    assert _get(handle, "/healthz") == (200, {"status": "ok"})


def test_search_endpoint_equals_local_search(service):
    st, handle, _ = service
    status, payload = _get(handle, "/playbooks?type=Detection")
    assert status == 200
    local = [rec.to_dict() for rec in st.search(QueryFilter(playbook_type=frozenset({"Detection"})))]
    assert payload == local


def test_get_head_and_history(service):
    st, handle, envs = service
    target = envs[0].id
    assert _get(handle, f"/playbooks/{target}") == (200, st.get(target).to_dict())
    assert _get(handle, f"/playbooks/{target}/history")[1] == [
        rec.to_dict() for rec in st.history(target)
    ]


def test_unknown_id_is_404(service):
    _, handle, _ = service
    host, port = handle.address
    with pytest.raises(urllib.error.HTTPError) as exc:
        urllib.request.urlopen(
            f"http://{host}:{port}/playbooks/security-playbook--ffffffff-ffff-ffff-ffff-ffffffffffff"
        )
    assert exc.value.code == 404
    assert json.loads(exc.value.read()) == {"error": "not_found"}


def test_bad_query_is_400(service):
    _, handle, _ = service
    host, port = handle.address
    with pytest.raises(urllib.error.HTTPError) as exc:
        urllib.request.urlopen(f"http://{host}:{port}/playbooks?valid_at=whenever")
    assert exc.value.code == 400
    assert json.loads(exc.value.read())["error"] == "bad_query"


def test_bundle_endpoints_round_trip(service, open_store):
    st, handle, _ = service
    status, exported = _get(handle, "/bundle")
    assert status == 200
    assert len(exported["records"]) == len(st.heads())

    status, report = _post(handle, "/bundle", exported)
    assert status == 200
    assert report["duplicates"] == len(exported["records"])

    status, report = _post(handle, "/bundle", exported)  # idempotent
    assert report["duplicates"] == len(exported["records"])
    assert report["inserted"] == 0


def test_malformed_bundle_post_is_400(service):
    _, handle, _ = service
    status, payload = _post(handle, "/bundle", {"nope": 1})
    assert status == 400
    assert payload["error"] == "malformed_bundle"


def test_bind_failure(open_store):
    st = open_store("bindtest")
    first = sync.serve(st, "127.0.0.1:0")
    host, port = first.address
    try:
        with pytest.raises(BindFailure):
            sync.serve(st, f"{host}:{port}")
    finally:
        first.shutdown()
