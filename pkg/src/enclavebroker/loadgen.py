"""Generator for large deterministic scenarios.

Produces a directory, topology, and scenario sized like a busy research
enclave: many data-provider projects, a larger project population, and a
researcher pool several times the steward count. Everything derives from
one seed so repeated runs replay identically.
"""

from __future__ import annotations

import random

DAY = 86400


def build_topology(hosts: int = 16, host_cpu: int = 256, host_ram: int = 512) -> dict:
    return {
        "zones": [
            {"id": "internet"},
            {"id": "campus"},
            {"id": "management"},
            {"id": "protected-vrf"},
            {"id": "research-subnet", "parent": "protected-vrf"},
        ],
        "gateways": [
            {"id": "gw-vrf-vpn", "kind": "vpn", "admits_to": "protected-vrf", "mode": "vpn"},
            {"id": "gw-research-vpn", "kind": "vpn", "admits_to": "research-subnet", "mode": "vpn"},
            {"id": "gw-vrf-jump", "kind": "jumpbox", "admits_to": "protected-vrf", "mode": "rdp"},
            {"id": "gw-research-jump", "kind": "jumpbox", "admits_to": "research-subnet", "mode": "rdp"},
        ],
        "hosts": [
            {"id": f"host-{i:02d}", "dedicated": i < 2, "cpu": host_cpu, "ram": host_ram}
            for i in range(hosts)
        ],
        "exceptions": [
            {"id": "exc-patching", "service": "patching", "src": "management",
             "dst": "protected-vrf", "direction": "inbound",
             "documented_by": "system update service"},
        ],
    }


def build_directory(researchers: int = 200, stewards: int = 40) -> dict:
    users = [{"netid": "admin1", "affiliation": "member", "mfa_secret": "mfa-admin1"},
             {"netid": "broker1", "affiliation": "member", "mfa_secret": "mfa-broker1"}]
    for i in range(stewards):
        users.append({"netid": f"stw{i:03d}", "affiliation": "member",
                      "mfa_secret": f"mfa-stw{i:03d}"})
    for i in range(researchers):
        users.append({"netid": f"res{i:03d}", "affiliation": "member",
                      "mfa_secret": f"mfa-res{i:03d}"})
    return {"admins": ["admin1"], "users": users, "groups": [], "issuers": [],
            "subject_map": {}}


def build_scenario(seed: int = 11, *, providers: int = 75, projects: int = 125,
                   researchers: int = 200, stewards: int = 40,
                   sessions_target: int = 520, clock: int = 0) -> dict:
    """Step list covering grants, sessions, egress, exports, and retention."""
    rng = random.Random(seed)
    steps: list[dict] = []

    def step(op: str, **args) -> None:
        steps.append({"op": op, "args": args})

    project_ids = [f"proj-{i:03d}" for i in range(projects)]
    for i, pid in enumerate(project_ids):
        steward = f"stw{i % stewards:03d}"
        tier = "sensitive" if i % 3 else "restricted"
        zone = "research-subnet" if i % 2 else "protected-vrf"
        args = {
            "actor": "admin1", "id": pid, "classification": tier,
            "stewards": [steward], "zone": zone, "brokers": ["broker1"],
        }
        if i < providers:
            args["proxy_whitelist"] = [f"https://provider{i:02d}.example.org"]
        step("register_project", **args)

    # Each project gets a small granted cohort; stewards get VPN, the rest RDP.
    members: dict[str, list[tuple[str, str]]] = {}
    for i, pid in enumerate(project_ids):
        steward = f"stw{i % stewards:03d}"
        step("grant_access", actor=steward, project=pid, netid=steward, mode="vpn")
        cohort = rng.sample(range(researchers), k=rng.randint(2, 4))
        members[pid] = [(steward, "vpn")]
        for r in cohort:
            netid = f"res{r:03d}"
            step("grant_access", actor=steward, project=pid, netid=netid, mode="rdp")
            members[pid].append((netid, "rdp"))

    # Interleave sessions with in-session activity across simulated days.
    opened = 0
    session_seq = 0
    while opened < sessions_target:
        pid = project_ids[rng.randrange(projects)]
        netid, mode = members[pid][rng.randrange(len(members[pid]))]
        step("verify_mfa", netid=netid, proof=f"mfa-{netid}")
        step("open_session", netid=netid, project=pid, mode=mode,
             endpoint_managed=(mode == "vpn"))
        session_seq += 1
        sid = f"s-{session_seq:06d}"
        opened += 1
        if rng.random() < 0.5:
            step("attempt_clipboard", session=sid, direction="out")
        if rng.random() < 0.5:
            step("attempt_file_egress", session=sid, object=f"dataset-{opened}.csv")
        if mode == "rdp" and rng.random() < 0.2:
            step("submit_export", session=sid, payload=f"results-{opened}.tar")
        step("close_session", session=sid)
        if rng.random() < 0.1:
            step("advance", seconds=DAY)

    # Adjudicate a deterministic slice of the queued exports.
    export_count = sum(1 for s in steps if s["op"] == "submit_export")
    for i in range(export_count):
        rid = f"req-{i + 1:04d}"
        verdict = "approved" if i % 2 == 0 else "denied"
        step("adjudicate_export", broker="broker1", request=rid, verdict=verdict,
             rationale="reviewed against the data use agreement")

    # Provider projects exercise the download proxy.
    for i in range(providers):
        step("proxy_fetch", project=f"proj-{i:03d}",
             url=f"https://provider{i:02d}.example.org/extract.zip")
        if i % 7 == 0:
            step("proxy_fetch", project=f"proj-{i:03d}",
                 url="https://unrelated.example.net/payload")

    step("advance", seconds=40 * DAY)
    step("expire_retained")
    return {"seed": seed, "clock": clock, "steps": steps}
