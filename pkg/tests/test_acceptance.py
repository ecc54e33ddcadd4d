"""Acceptance suite. One test per criterion; each prints a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines as they
complete. Every tolerance and bound is pinned here, not calibrated later.
"""

from __future__ import annotations

import dataclasses
import functools
import itertools
import json
import random
import time

import pytest

from enclavebroker.configio import Scenario, build_broker, run_scenario
from enclavebroker.errors import BrokerError, ContentDestroyed, DigestMismatch
from enclavebroker.loadgen import build_directory, build_scenario, build_topology
from enclavebroker.pipeline import ImageState, payload_digest
from enclavebroker.sessions import DAY, AuthOutcome

from conftest import authenticate, make_broker
from oracles import access_table, bfs_reachable, recount_report, resolve_by_scan
from topogen import ENCLAVE_ZONES, engine_answer, random_topology


def criterion(number: int, name: str):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"ACCEPTANCE {number} {name}: FAIL")
                raise
            print(f"ACCEPTANCE {number} {name}: PASS")
        return run
    return wrap


# -- criterion 1 -------------------------------------------------------------


@criterion(1, "no-direct-ingress")
def test_no_direct_ingress_oracle_agreement():
    """1,000 randomized topologies, full (src, dst, service) enumeration:
    the engine agrees with the BFS oracle on every triple, and every allow
    that crosses into an enclave zone rides exactly one gateway or one
    exception rule. Bound: under 60 seconds."""
    rng = random.Random(1001)
    started = time.monotonic()
    checked = 0
    for _ in range(1000):
        enclave, topo, queries = random_topology(rng)
        for q in queries:
            engine = engine_answer(enclave, q)
            oracle = bfs_reachable(topo, q)
            assert engine.allowed == oracle.allowed, (q, engine.reason)
            checked += 1
            if not engine.allowed:
                continue
            dst_zone = topo.endpoints[q.dst].zone
            src_ep = topo.endpoints.get(q.src)
            src_zone = q.src if src_ep is None else src_ep.zone
            if q.ctx_mode is not None:
                src_zone = q.src
            if dst_zone in ENCLAVE_ZONES and src_zone not in ENCLAVE_ZONES:
                assert oracle.gateways + oracle.exceptions == 1, (q, oracle.path)
                hops = sum(1 for h in engine.path
                           if h in enclave.gateways or h.startswith("exception:"))
                assert hops == 1, (q, engine.path)
    elapsed = time.monotonic() - started
    assert checked > 100_000
    assert elapsed < 60, f"enumeration took {elapsed:.1f}s"


# -- criterion 2 -------------------------------------------------------------


@criterion(2, "credential-window")
def test_credential_window_over_randomized_traces():
    """10,000 randomized traces of open/close/resume/authenticate: no
    authentication is accepted outside an open session and every
    cross-session replay is rejected. Bound: under 60 seconds."""
    started = time.monotonic()
    broker = make_broker(seed=21)
    users = ["res1", "res2", "res3"]
    for netid in users:
        broker.policy.grant_access("stw1", "study", netid, "rdp")
        broker.policy.grant_access("stw2", "atlas", netid, "rdp")
    projects = ["study", "atlas"]
    rng = random.Random(2002)
    open_state: dict[tuple[str, str], tuple[str, str, str]] = {}
    stale: list[tuple[str, str]] = []
    replays = 0
    for _ in range(10_000):
        for _ in range(rng.randint(2, 5)):
            user = rng.choice(users)
            project = rng.choice(projects)
            key = (user, project)
            op = rng.choice(["open", "close", "resume", "auth", "replay",
                             "advance", "expire"])
            if op == "open" and key not in open_state:
                session, _ = broker.sessions.open_session(
                    authenticate(broker, user), project, "rdp", False)
                secret = broker.sessions.credential(session.credential_id).secret
                open_state[key] = (session.id, secret, session.vm_id)
            elif op == "close" and key in open_state:
                sid, secret, vm = open_state.pop(key)
                broker.sessions.close_session(sid)
                stale.append((secret, vm))
            elif op == "resume" and key not in open_state:
                binding = broker.sessions.binding(user, project)
                if binding and binding.retained_until >= broker.clock.now:
                    session, _ = broker.sessions.resume_session(
                        authenticate(broker, user), project, "rdp", False)
                    secret = broker.sessions.credential(session.credential_id).secret
                    open_state[key] = (session.id, secret, session.vm_id)
            elif op == "auth" and key in open_state:
                _, secret, vm = open_state[key]
                assert broker.sessions.authenticate_to_vm(secret, vm) is AuthOutcome.ACCEPTED
            elif op == "replay" and stale:
                secret, vm = rng.choice(stale)
                assert broker.sessions.authenticate_to_vm(secret, vm) is AuthOutcome.REJECTED
                replays += 1
            elif op == "advance":
                broker.clock.advance(rng.randint(1, 10) * DAY)
            elif op == "expire":
                broker.sessions.expire_retained()
    assert replays > 1000, "replay coverage too thin to mean anything"
    elapsed = time.monotonic() - started
    assert elapsed < 60, f"traces took {elapsed:.1f}s"


# -- criteria 3 and 8 share one generated load run ----------------------------


@pytest.fixture(scope="module")
def load_runs(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("load")
    topo_path = tmp / "topology.json"
    dir_path = tmp / "directory.json"
    topo_path.write_text(json.dumps(build_topology()), encoding="utf-8")
    dir_path.write_text(json.dumps(build_directory()), encoding="utf-8")
    data = build_scenario(seed=11, providers=75, projects=125, researchers=200)
    scenario = Scenario(data["seed"], data["clock"], data["steps"])

    started = time.monotonic()
    brokers, exports = [], []
    for _ in range(2):
        broker = build_broker(topo_path, dir_path, seed=scenario.seed,
                              start_time=scenario.clock)
        outcome = run_scenario(broker, scenario)
        assert outcome.exit_code == 0, outcome.mismatches
        brokers.append(broker)
        exports.append(outcome.ledger_text)
    elapsed = time.monotonic() - started
    return brokers, exports, elapsed


@criterion(3, "traceability")
def test_traceability_against_linear_scan(load_runs):
    """Fuzzed multi-principal run (200 researchers, 520 sessions): every
    arbitrary-user-attributed event resolves to the principal the linear
    scan oracle finds."""
    brokers, _exports, _elapsed = load_runs
    broker = brokers[0]
    events = broker.ledger.events
    session_count = sum(1 for e in events if e.action == "map")
    principals = {e.detail["principal"] for e in events if e.action == "map"}
    assert session_count >= 500
    assert len(principals) >= 50
    lines = broker.ledger.export_lines()
    checked = 0
    for event in events:
        if not event.actor.startswith("u-"):
            continue
        resolved = broker.ledger.resolve_identity(event.actor, event.at)
        assert resolved == resolve_by_scan(lines, event.actor, event.at), event
        checked += 1
    assert checked > 200


# -- criterion 4 -------------------------------------------------------------


@criterion(4, "classification-truth-table")
def test_classification_truth_table_exhaustive():
    """Every tier x grant x role x mode combination matches the enumerated
    table; a sensitive-tier allow implies an explicit individual grant."""
    for tier, granted, role, mode in itertools.product(
            ("public", "restricted", "sensitive"), (False, True),
            (False, True), ("vpn", "rdp")):
        broker = make_broker()
        broker.policy.register_project(
            "admin1", "probe", tier, {"stw1"},
            role_rules={"analysts"} if tier != "public" else None)
        if granted and tier != "public":
            broker.policy.grant_access("stw1", "probe", "res1", mode)
        if role:
            broker.directory.group("analysts").members.add("res1")
        principal = authenticate(broker, "res1")
        decision = broker.policy.check_access(principal, "probe", mode)
        expected = access_table(tier, granted and tier != "public", role)
        assert decision.allowed == expected, (tier, granted, role, mode)
        if tier == "sensitive" and decision.allowed:
            grants = [e for e in broker.ledger.events
                      if e.action == "grant" and e.detail["netid"] == "res1"
                      and e.detail["mode"] == mode]
            assert grants, "sensitive allow without an explicit grant event"


# -- criterion 5 -------------------------------------------------------------


@criterion(5, "rdp-egress-closure")
def test_rdp_egress_closure():
    """Property fuzzing finds no allow for RDP clipboard or file egress;
    the only RDP-origin releases in the ledger are approved export tokens
    adjudicated by someone other than the requester."""
    broker = make_broker(seed=55)
    rng = random.Random(5005)
    for netid in ("res1", "res2", "res3"):
        broker.policy.grant_access("stw1", "study", netid, "rdp")
    broker.policy.grant_access("stw1", "study", "stw1", "vpn")
    pending = []
    for round_no in range(300):
        netid = rng.choice(["res1", "res2", "res3", "stw1"])
        mode = "vpn" if netid == "stw1" else "rdp"
        try:
            session, _ = broker.sessions.open_session(
                authenticate(broker, netid), "study", mode, mode == "vpn")
        except BrokerError:
            continue
        for _ in range(rng.randint(1, 4)):
            kind = rng.choice(["clip-in", "clip-out", "file", "export"])
            if kind == "clip-in":
                decision = broker.egress.attempt_clipboard(session.id, "in")
            elif kind == "clip-out":
                decision = broker.egress.attempt_clipboard(session.id, "out")
            elif kind == "file":
                decision = broker.egress.attempt_file_egress(session.id, "blob")
            else:
                pending.append(broker.egress.submit_export(session.id, "result"))
                continue
            if mode == "rdp":
                assert not decision.allowed
        broker.sessions.close_session(session.id)
    for i, request in enumerate(pending):
        broker.egress.adjudicate_export("broker1", request.id,
                                        "approved" if i % 2 else "denied",
                                        "reviewed")
    for event in broker.ledger.events:
        if event.action == "egress-allow":
            assert event.detail["mode"] != "rdp"
        if event.action == "export-adjudicate" and "release_token" in event.detail:
            assert event.detail["broker"] != event.detail["requester"]
    # release tokens appear nowhere else in the ledger
    tokens = [e.detail["release_token"] for e in broker.ledger.events
              if e.action == "export-adjudicate" and "release_token" in e.detail]
    assert tokens
    for line in broker.ledger.export_lines():
        record = json.loads(line)
        for token in tokens:
            if token in line:
                assert record["action"] == "export-adjudicate"


# -- criterion 6 -------------------------------------------------------------


@criterion(6, "pipeline-soundness")
def test_pipeline_soundness_model_check():
    """All image state-machine action sequences of length <= 6: no image
    reaches deployed without one vet and one approve, in order. Digest
    bit-flips are rejected 100/100 times."""
    broker = make_broker(seed=66)
    shared_vm = broker.enclave.provision_vm("study", "research-subnet", 4, 16)
    actions = ("vet", "approve", "deploy", "revoke")
    for length in range(1, 7):
        for sequence in itertools.product(actions, repeat=length):
            image = broker.pipeline.submit_image("res1", "study",
                                                 f"img-{length}-{hash(sequence)}",
                                                 source="campus")
            history = []
            for action in sequence:
                try:
                    if action == "vet":
                        broker.pipeline.vet_image("vetter1", image.id, "ok")
                    elif action == "approve":
                        broker.pipeline.approve_image("stw1", image.id)
                    elif action == "deploy":
                        broker.pipeline.deploy_image("admin1", image.id, "study",
                                                     image.digest, vm_id=shared_vm.id)
                    else:
                        broker.pipeline.revoke_image("admin1", image.id)
                except BrokerError:
                    continue
                history.append(action)
            if image.state is ImageState.DEPLOYED or "deploy" in history:
                assert history.count("vet") == 1
                assert history.count("approve") == 1
                deploy_at = history.index("deploy")
                assert history.index("vet") < history.index("approve") < deploy_at
    # ledger-trail version of the same statement
    deployed = [e.object for e in broker.ledger.events if e.action == "image-deploy"]
    for image_id in set(deployed):
        trail = [e.action for e in broker.ledger.events if e.object == image_id]
        assert trail.index("image-vet") < trail.index("image-approve") \
            < trail.index("image-deploy")

    rng = random.Random(6006)
    payload = "payload-under-test"
    image = broker.pipeline.submit_image("res1", "study", payload, source="campus")
    broker.pipeline.vet_image("vetter1", image.id, "ok")
    broker.pipeline.approve_image("stw1", image.id)
    rejected = 0
    for _ in range(100):
        raw = bytearray(payload.encode())
        raw[rng.randrange(len(raw))] ^= 1 << rng.randrange(8)
        forged = payload_digest(raw.decode("latin-1"))
        assert forged != image.digest
        try:
            broker.pipeline.deploy_image("admin1", image.id, "study", forged,
                                         vm_id=shared_vm.id)
        except DigestMismatch:
            rejected += 1
    assert rejected == 100


# -- criterion 7 -------------------------------------------------------------


@criterion(7, "destruction-finality-and-retention")
def test_destruction_finality_and_retention():
    """Disk reads fail after destroy or expiry in every trace; resume
    within retention preserves the disk token."""
    rng = random.Random(7007)
    for seed in range(40):
        broker = make_broker(seed=seed)
        broker.policy.grant_access("stw1", "study", "res1", "rdp")
        token = None
        destroyed: set[str] = set()
        last_vm = None
        for _ in range(25):
            op = rng.choice(["open-close", "resume", "advance", "expire",
                             "destroy", "read"])
            if op == "open-close":
                key = broker.sessions.binding("res1", "study")
                live = (key is not None
                        and key.retained_until >= broker.clock.now
                        and broker.enclave.vms[key.vm_id].state.value != "destroyed")
                try:
                    session, _ = broker.sessions.open_session(
                        authenticate(broker, "res1"), "study", "rdp", False)
                except BrokerError:
                    continue
                if live:
                    assert broker.enclave.read_disk(session.vm_id) == token
                token = f"tok-{rng.randrange(10**6)}"
                broker.enclave.write_disk(session.vm_id, token)
                last_vm = session.vm_id
                broker.sessions.close_session(session.id)
            elif op == "resume":
                binding = broker.sessions.binding("res1", "study")
                if (binding and binding.retained_until >= broker.clock.now
                        and binding.vm_id not in destroyed):
                    session, _ = broker.sessions.resume_session(
                        authenticate(broker, "res1"), "study", "rdp", False)
                    assert broker.enclave.read_disk(session.vm_id) == token
                    broker.sessions.close_session(session.id)
            elif op == "advance":
                broker.clock.advance(rng.randint(1, 20) * DAY)
            elif op == "expire":
                for vm_id in broker.sessions.expire_retained():
                    destroyed.add(vm_id)
            elif op == "destroy" and last_vm and last_vm not in destroyed:
                if broker.enclave.vms[last_vm].state.value != "destroyed":
                    broker.enclave.destroy_vm(last_vm)
                destroyed.add(last_vm)
            elif op == "read" and last_vm:
                if (last_vm in destroyed
                        or broker.enclave.vms[last_vm].state.value == "destroyed"):
                    with pytest.raises(ContentDestroyed):
                        broker.enclave.read_disk(last_vm)
            for vm_id in destroyed:
                with pytest.raises(ContentDestroyed):
                    broker.enclave.read_disk(vm_id)


# -- criterion 8 -------------------------------------------------------------


@criterion(8, "scale-load-determinism")
def test_scale_load_replays_deterministically(load_runs):
    """75 data-provider projects, 125 projects total, 200 researchers:
    the scenario replays in under 5 minutes with byte-identical ledger
    exports, and every compliance report matches the recount oracle."""
    brokers, exports, elapsed = load_runs
    assert elapsed < 300, f"two runs took {elapsed:.1f}s"
    assert exports[0] == exports[1]
    assert exports[0]

    broker = brokers[0]
    assert len(broker.policy.projects()) == 125
    providers = [p for p in broker.policy.projects() if p.proxy_whitelist]
    assert len(providers) == 75

    lines = broker.ledger.export_lines()
    end = broker.clock.now
    for project in broker.policy.projects():
        report = broker.ledger.compliance_report(project.id, 0, end)
        expected = recount_report(lines, project.id, 0, end)
        assert report.sessions_by_mode == expected["sessions_by_mode"]
        assert report.egress_allowed == expected["egress_allowed"]
        assert report.egress_denied == expected["egress_denied"]
        assert report.exception_traversals == expected["exception_traversals"]
        assert report.grants == expected["grants"]
        assert report.revokes == expected["revokes"]
        assert report.efficiency_flags == expected["efficiency_flags"]


# -- criterion 9 -------------------------------------------------------------


def _flip_bit_in_text(text: str, rng: random.Random) -> str:
    i = rng.randrange(len(text))
    flipped = chr(ord(text[i]) ^ (1 << rng.randrange(1, 5)))
    return text[:i] + flipped + text[i + 1:]


@criterion(9, "ledger-tamper-evidence")
def test_single_bit_tamper_detected():
    """Any single-bit mutation of any event in a 10,000-event ledger is
    caught by chain verification at or before the mutated sequence number."""
    broker = make_broker(seed=9)
    for i in range(10_000 - len(broker.ledger)):
        broker.ledger.append("admin1", "register", f"obj-{i}", {"n": str(i)})
    assert len(broker.ledger) >= 10_000
    assert broker.ledger.verify_chain() == (True, None)

    rng = random.Random(9009)
    events = broker.ledger._events
    for _ in range(500):
        idx = rng.randrange(len(events))
        original = events[idx]
        field = rng.choice(["actor", "action", "object", "at", "detail",
                            "prev_hash", "this_hash"])
        if field == "at":
            tampered = dataclasses.replace(original,
                                           at=original.at ^ (1 << rng.randrange(16)))
        elif field == "detail":
            detail = dict(original.detail)
            if not detail:
                detail["x"] = "1"
            else:
                key = rng.choice(sorted(detail))
                detail[key] = _flip_bit_in_text(detail[key] or "0", rng)
            tampered = dataclasses.replace(original, detail=detail)
        else:
            value = getattr(original, field)
            tampered = dataclasses.replace(
                original, **{field: _flip_bit_in_text(value, rng)})
        if tampered == original:
            continue
        events[idx] = tampered
        ok, bad = broker.ledger.verify_chain()
        events[idx] = original
        assert not ok, (idx, field)
        assert bad is not None and bad <= original.seq, (idx, field, bad)
    assert broker.ledger.verify_chain() == (True, None)
