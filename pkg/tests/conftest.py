from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from enclavebroker import Broker
from enclavebroker.identity import GroupKind

ZONES = [
    ("internet", None),
    ("campus", None),
    ("management", None),
    ("protected-vrf", None),
    ("research-subnet", "protected-vrf"),
]


def make_broker(seed: int = 0, *, allow_concurrent: bool = False,
                retention_days: int = 30) -> Broker:
    """A small but complete environment: two projects, both gateways per
    zone, a shared and a dedicated host, and the usual cast of users."""
    b = Broker(seed=seed, retention_days=retention_days,
               allow_concurrent_sessions=allow_concurrent)
    for zone, parent in ZONES:
        b.enclave.add_zone(zone, parent)
    b.enclave.add_gateway("gw-research-jump", "jumpbox", "research-subnet", "rdp")
    b.enclave.add_gateway("gw-research-vpn", "vpn", "research-subnet", "vpn")
    b.enclave.add_gateway("gw-vrf-jump", "jumpbox", "protected-vrf", "rdp")
    b.enclave.add_gateway("gw-vrf-vpn", "vpn", "protected-vrf", "vpn")
    b.enclave.add_host("host-a", False, 64, 256)
    b.enclave.add_host("host-b", True, 64, 256)

    b.directory.admins.add("admin1")
    for netid in ("admin1", "stw1", "stw2", "res1", "res2", "res3",
                  "broker1", "vetter1"):
        b.directory.register_user(netid, "member", mfa_secret=f"mfa-{netid}")
    b.directory.create_group("analysts", GroupKind.ROLE)
    b.directory.create_group("vetters", GroupKind.ROLE)
    b.directory.group("vetters").members.add("vetter1")

    b.policy.register_project("admin1", "study", "sensitive", {"stw1"},
                              zone="research-subnet", brokers=["broker1"],
                              proxy_whitelist=["https://provider.example.org"])
    b.policy.register_project("admin1", "atlas", "restricted", {"stw2"},
                              role_rules={"analysts"}, zone="protected-vrf",
                              brokers=["broker1"])
    return b


def authenticate(broker: Broker, netid: str):
    return broker.directory.verify_mfa(netid, f"mfa-{netid}")


def open_rdp(broker: Broker, netid: str = "res1", project: str = "study"):
    """Grant (if needed), authenticate, and open an RDP session."""
    project_obj = broker.policy.get_project(project)
    steward = sorted(project_obj.stewards)[0]
    if not broker.directory.is_member(project_obj.rdp_group, netid):
        broker.policy.grant_access(steward, project, netid, "rdp")
    principal = authenticate(broker, netid)
    return broker.sessions.open_session(principal, project, "rdp", False)


@pytest.fixture
def broker() -> Broker:
    return make_broker()
