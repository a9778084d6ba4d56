import json
import logging
import random
import threading

import pytest

from pbmeta import model, store as store_mod
from pbmeta.errors import ConflictingContent, InvalidEnvelope, NotFound, ReadOnlyStore, StoreLocked
from pbmeta.store import (
    PUT_DUPLICATE,
    PUT_INSERTED,
    PUT_NEW_VERSION,
    PUT_STALE_IGNORED,
    PlaybookStore,
    QueryFilter,
    StoreRecord,
)

from conftest import make_clock, random_envelope
from test_model import sample_envelope


@pytest.fixture
def open_store(tmp_path):
    stores = []

    def opener(name="kb", **kwargs):
        st = PlaybookStore(tmp_path / name, **kwargs)
        stores.append(st)
        return st

    yield opener
    for st in stores:
        st.close()


def record(env, at="2022-06-01T00:00:00.000Z", origin="local"):
    return StoreRecord(env, ingested_at=model.parse_timestamp(at), origin=origin)


def test_put_outcomes(open_store):
    st = open_store()
    env = sample_envelope()
    assert st.put(record(env)) == PUT_INSERTED
    assert st.put(record(env)) == PUT_DUPLICATE

    v2 = model.revise(env, {"description": "v2"}, clock=make_clock("2022-02-01T00:00:00.000Z"))
    assert st.put(record(v2)) == PUT_NEW_VERSION
    assert st.get(env.id).envelope == v2

    stale = model.revise(env, {"description": "old branch"},
                         clock=make_clock("2021-06-01T00:00:00.000Z"))
    assert stale.modified < v2.modified
    assert st.put(record(stale)) == PUT_STALE_IGNORED
    assert st.get(env.id).envelope == v2  # head unchanged
    assert len(st.history(env.id)) == 3


def test_put_conflicting_content(open_store):
    st = open_store()
    env = sample_envelope(description="a")
    st.put(record(env))
    with pytest.raises(ConflictingContent):
        st.put(record(sample_envelope(description="b")))


def test_put_refuses_invalid_envelope(open_store):
    st = open_store()
    with pytest.raises(InvalidEnvelope):
        st.put(record(sample_envelope(impact=101)))


def test_duplicate_ignores_record_metadata(open_store):
    st = open_store()
    env = sample_envelope()
    st.put(record(env, at="2022-06-01T00:00:00.000Z", origin="local"))
    assert st.put(record(env, at="2022-07-01T00:00:00.000Z", origin="peer-b")) == PUT_DUPLICATE
    assert st.get(env.id).origin == "local"  # original retained


def test_get_and_history(open_store):
    st = open_store()
    env = sample_envelope()
    v2 = model.revise(env, {"priority": 1}, clock=make_clock("2022-02-01T00:00:00.000Z"))
    st.put(record(env))
    st.put(record(v2))
    assert st.get(env.id).envelope == v2
    assert [r.envelope for r in st.history(env.id)] == [env, v2]
    with pytest.raises(NotFound):
        st.get("security-playbook--ffffffff-ffff-ffff-ffff-ffffffffffff")
    with pytest.raises(NotFound):
        st.history("security-playbook--ffffffff-ffff-ffff-ffff-ffffffffffff")


def test_revoked_head_is_returned_by_get(open_store):
    st = open_store()
    env = sample_envelope()
    st.put(record(env))
    revoked = model.revoke(env, clock=make_clock("2022-02-01T00:00:00.000Z"))
    st.put(record(revoked))
    assert st.get(env.id).envelope.revoked is True


def test_search_excludes_revoked_by_default(open_store):
    st = open_store()
    env = sample_envelope()
    st.put(record(model.revoke(env, clock=make_clock("2022-02-01T00:00:00.000Z"))))
    assert st.search(QueryFilter()) == []
    assert len(st.search(QueryFilter(include_revoked=True))) == 1


def test_search_matches_all_predicates_conjunctively(open_store):
    st = open_store()
    env = sample_envelope(
        label=frozenset({"dns"}),
        description="block bad domain",
        valid_from=model.parse_timestamp("2022-01-01T00:00:00.000Z"),
        valid_until=model.parse_timestamp("2023-01-01T00:00:00.000Z"),
    )
    st.put(record(env))
    hit = QueryFilter(
        label="dns",
        playbook_type=frozenset({"Detection", "Attack"}),
        playbook_standard="cacao",
        creator="org--a",
        valid_at=model.parse_timestamp("2022-06-01T00:00:00.000Z"),
        text="bad domain",
    )
    assert [r.envelope for r in st.search(hit)] == [env]
    for miss in (
        QueryFilter(label="smtp"),
        QueryFilter(playbook_type=frozenset({"Attack"})),
        QueryFilter(playbook_standard="sigma"),
        QueryFilter(creator="someone-else"),
        QueryFilter(valid_at=model.parse_timestamp("2024-01-01T00:00:00.000Z")),
        QueryFilter(text="nosuch"),
    ):
        assert st.search(miss) == []


def test_search_ordering_priority_then_modified_then_id(open_store):
    st = open_store()

    def env_with(n, priority, modified):
        return sample_envelope(
            id=f"security-playbook--00000000-0000-0000-0000-0000000000{n:02d}",
            priority=priority,
            modified=model.parse_timestamp(modified),
        )

    st.put(record(env_with(1, 0, "2022-03-01T00:00:00.000Z")))    # undefined last
    st.put(record(env_with(2, 100, "2022-03-01T00:00:00.000Z")))
    st.put(record(env_with(3, 1, "2022-03-01T00:00:00.000Z")))
    st.put(record(env_with(4, 1, "2022-04-01T00:00:00.000Z")))    # newer first within prio
    st.put(record(env_with(5, 1, "2022-03-01T00:00:00.000Z")))    # id tiebreak with 3
    got = [r.envelope.id[-2:] for r in st.search(QueryFilter())]
    assert got == ["04", "03", "05", "02", "01"]


def test_persistence_round_trip(open_store, tmp_path):
    st = open_store("kb1")
    rng = random.Random(5)
    for _ in range(25):
        st.put(record(random_envelope(rng)))
    before_records = [r.to_json() for r in st.heads()]
    before_search = model.dump_json([r.to_dict() for r in st.search(QueryFilter())])
    st.close()

    reopened = open_store("kb1")
    assert [r.to_json() for r in reopened.heads()] == before_records
    assert model.dump_json([r.to_dict() for r in reopened.search(QueryFilter())]) == before_search


def test_truncated_trailing_line_is_dropped(open_store, tmp_path, caplog):
    st = open_store("kb2")
    env = sample_envelope()
    st.put(record(env))
    st.close()
    log_path = tmp_path / "kb2" / "log.jsonl"
    with open(log_path, "a", encoding="utf-8") as f:
        f.write('{"envelope": {"id": "security-play')  # torn write
    with caplog.at_level(logging.WARNING):
        reopened = open_store("kb2")
    assert "truncated" in caplog.text
    assert reopened.get(env.id).envelope == env


def test_corrupt_interior_line_raises(open_store, tmp_path):
    st = open_store("kb3")
    st.put(record(sample_envelope()))
    st.close()
    log_path = tmp_path / "kb3" / "log.jsonl"
    content = log_path.read_text()
    log_path.write_text("garbage\n" + content)
    with pytest.raises(store_mod.PlaybookError):
        open_store("kb3")


def test_writer_lock_is_exclusive_but_readers_are_free(open_store):
    st = open_store("kb4")
    st.put(record(sample_envelope()))
    with pytest.raises(StoreLocked):
        open_store("kb4")
    reader = open_store("kb4", read_only=True)
    assert len(reader.heads()) == 1
    with pytest.raises(ReadOnlyStore):
        reader.put(record(sample_envelope()))


def test_concurrent_puts_and_searches(open_store):
    st = open_store("kb5")
    rng = random.Random(9)
    envs = [random_envelope(rng) for _ in range(40)]
    errors = []

    def writer(chunk):
        try:
            for env in chunk:
                st.put(record(env))
        except Exception as exc:  # pragma: no cover - failure reporting
            errors.append(exc)

    def searcher():
        try:
            for _ in range(30):
                st.search(QueryFilter(include_revoked=True))
        except Exception as exc:  # pragma: no cover
            errors.append(exc)

    threads = [threading.Thread(target=writer, args=(envs[i::2],)) for i in range(2)]
    threads.append(threading.Thread(target=searcher))
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert len(st.heads()) == len({e.id for e in envs})


def test_log_lines_are_single_json_objects(open_store, tmp_path):
    st = open_store("kb6")
    st.put(record(sample_envelope()))
    st.close()
    lines = (tmp_path / "kb6" / "log.jsonl").read_text().strip().split("\n")
    assert len(lines) == 1
    parsed = json.loads(lines[0])
    assert set(parsed) == {"envelope", "ingested_at", "origin"}
