"""Shared test helpers: injectable clocks/uuids and randomized generators."""

from __future__ import annotations

import random
import uuid
from datetime import datetime, timedelta, timezone
from pathlib import Path

from pbmeta import model
from pbmeta.model import PlaybookEnvelope

FIXTURES = Path(__file__).parent / "fixtures"

EPOCH = datetime(2020, 1, 1, tzinfo=timezone.utc)


def make_clock(start: str = "2022-01-01T00:00:00.000Z", step_ms: int = 0):
    """A clock that starts at `start` and advances `step_ms` per call."""
    state = {"now": model.parse_timestamp(start)}

    def clock() -> datetime:
        now = state["now"]
        state["now"] = now + timedelta(milliseconds=step_ms)
        return now

    return clock


def make_uuid_source(start: int = 0):
    """Deterministic uuid sequence: 00000000-...-0000000000<n>."""
    state = {"n": start}

    def source() -> uuid.UUID:
        state["n"] += 1
        return uuid.UUID(int=state["n"])

    return source


_WORDS = (
    "dns", "phishing", "ransomware", "apt-x", "edr", "lateral-movement",
    "containment", "watering-hole", "Ωmega", "zero_day", "c2-beacon",
)
_SECTORS = ("energy", "finance", "healthcare", "telecom", "public-sector")
_CREATORS = (
    "identity--7a611746-6a69-41b3-8a1b-1c9e95d4a4b8",
    "org--cert-xx",
    "Alice Analyst",
    "soc@example.net",
)
_DESCRIPTIONS = (
    None,
    "Blocks the offending domain at the resolver.",
    'Quoted "values" and back\\slashes included.',
    "multi-line\ndescription with a tab\there",
    "Unicode: ÿü – ∆détection",
)


def random_timestamp(rng: random.Random, base: datetime = EPOCH) -> datetime:
    return model.truncate_ms(
        base + timedelta(seconds=rng.randrange(0, 10**8), milliseconds=rng.randrange(1000))
    )


def random_envelope(rng: random.Random) -> PlaybookEnvelope:
    """A structurally and semantically valid randomized envelope."""
    created = random_timestamp(rng)
    modified = created + timedelta(seconds=rng.randrange(0, 10**6), milliseconds=rng.randrange(1000))
    kwargs: dict = {
        "id": model.ID_PREFIX + str(uuid.UUID(int=rng.getrandbits(128), version=4)),
        "created": created,
        "modified": modified,
        "revoked": rng.random() < 0.15,
        "creator": rng.choice(_CREATORS),
        "playbook_standard": rng.choice(("cacao", "sigma", "bpmn", "prose")),
        "playbook_abstraction": rng.choice(model.ABSTRACTION_LEVELS),
        "playbook_type": frozenset(
            rng.sample(model.PLAYBOOK_TYPES, rng.randrange(1, 4))
        ),
        "impact": rng.choice((0, rng.randrange(1, 101))),
        "severity": rng.choice((0, rng.randrange(1, 101))),
        "priority": rng.choice((0, rng.randrange(1, 101))),
        "description": rng.choice(_DESCRIPTIONS),
        "label": frozenset(rng.sample(_WORDS, rng.randrange(0, 4))),
        "organization_type": frozenset(rng.sample(_SECTORS, rng.randrange(0, 3))),
    }
    if rng.random() < 0.5:
        start = random_timestamp(rng)
        kwargs["valid_from"] = start
        if rng.random() < 0.7:
            kwargs["valid_until"] = start + timedelta(days=rng.randrange(1, 400))
    body = rng.randbytes(rng.randrange(1, 512))
    mode = rng.randrange(3)
    if mode == 0:
        kwargs["playbook"] = body
    elif mode == 1:
        kwargs["playbook_base64"] = model.encode_base64(body)
    else:
        kwargs["playbook"] = body
        kwargs["playbook_base64"] = model.encode_base64(body)
    env = PlaybookEnvelope(**kwargs)
    assert model.validate_envelope(env).ok, "generator must produce valid envelopes"
    return env


# --- randomized CACAO workflow documents -----------------------------------

def random_workflow_doc(rng: random.Random, max_steps: int = 50) -> dict:
    """A playbook dict whose workflow graph exercises every finding kind."""
    n = rng.randrange(0, max_steps + 1)
    ids = [f"step--{i:04d}" for i in range(n)]
    workflow: dict = {}
    for i, sid in enumerate(ids):
        step: dict = {"type": rng.choice(("start", "single", "parallel", "if-condition",
                                          "switch-condition", "end"))}

        def ref() -> str:
            if rng.random() < 0.06:
                return f"step--missing-{rng.randrange(100):03d}"
            return rng.choice(ids)

        if rng.random() < 0.75:
            step["on_completion"] = [ref(), ref()] if rng.random() < 0.1 else ref()
        if rng.random() < 0.15:
            step["on_success"] = ref()
            step["on_failure"] = ref()
        if step["type"] == "if-condition" and rng.random() < 0.8:
            step["condition"] = "alert_count > 0"
            step["on_true"] = ref()
            step["on_false"] = ref()
        if step["type"] == "parallel" and rng.random() < 0.8:
            step["next_steps"] = [ref() for _ in range(rng.randrange(1, 4))]
        if step["type"] == "switch-condition" and rng.random() < 0.8:
            step["switch"] = "severity"
            step["cases"] = {
                case: ([ref(), ref()] if rng.random() < 0.2 else ref())
                for case in rng.sample(("low", "medium", "high", "default"), rng.randrange(1, 4))
            }
        if rng.random() < 0.3:
            count = rng.randrange(0, 3) if rng.random() < 0.15 else rng.randrange(1, 3)
            step["commands"] = [
                {"type": "manual", "command": f"do thing {j}"} for j in range(count)
            ]
        workflow[sid] = step
    if ids and rng.random() < 0.9:
        start = ids[0]
    else:
        start = "step--missing-start"
    return {
        "type": "playbook",
        "spec_version": "1.1",
        "id": f"playbook--{uuid.UUID(int=rng.getrandbits(128), version=4)}",
        "name": f"generated workflow {n}",
        "created": "2022-01-01T00:00:00.000Z",
        "modified": "2022-01-02T00:00:00.000Z",
        "playbook_types": ["detection"],
        "workflow_start": start,
        "workflow": workflow,
    }


# --- independent graph oracle (used by cacao + acceptance tests) ------------

ORACLE_SINGLE_KEYS = ("on_completion", "on_success", "on_failure", "on_true", "on_false")


def oracle_successors(step: dict) -> list[tuple[str, str]]:
    """Re-implementation of the successor-extraction contract over raw JSON."""
    refs: list[tuple[str, str]] = []

    def add(label, value):
        if isinstance(value, str):
            refs.append((label, value))
        elif isinstance(value, list):
            refs.extend((f"{label}[{i}]", v) for i, v in enumerate(value) if isinstance(v, str))

    for key in ORACLE_SINGLE_KEYS:
        if key in step:
            add(key, step[key])
    if "next_steps" in step:
        add("next_steps", step["next_steps"])
    if isinstance(step.get("cases"), dict):
        for case, value in step["cases"].items():
            add(f"cases[{case}]", value)
    return refs


def oracle_graph_findings(doc_dict: dict) -> dict:
    """Brute-force expected findings: dangling start/refs and unreachable steps."""
    workflow = doc_dict["workflow"]
    start = doc_dict["workflow_start"]
    if not workflow:
        return {"empty": True, "dangling_start": False, "dangling": set(), "unreachable": set()}
    dangling_start = start not in workflow
    dangling = set()
    for sid, step in workflow.items():
        for label, target in oracle_successors(step):
            if target not in workflow:
                dangling.add(f"workflow.{sid}.{label}")
    unreachable: set[str] = set()
    if not dangling_start:
        seen = set()
        frontier = [start]
        while frontier:
            current = frontier.pop()
            if current in seen:
                continue
            seen.add(current)
            for _, target in oracle_successors(workflow[current]):
                if target in workflow and target not in seen:
                    frontier.append(target)
        unreachable = {f"workflow.{sid}" for sid in set(workflow) - seen}
    return {
        "empty": False,
        "dangling_start": dangling_start,
        "dangling": dangling,
        "unreachable": unreachable,
    }
