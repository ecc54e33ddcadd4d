"""Independent oracles the engine is checked against.

Each oracle re-derives an answer through a different mechanism than the
module it checks: reachability by breadth-first search over an explicit
edge list, access decisions by direct evaluation of the classification
table, egress by the enumerated two-rule table, identity resolution by a
linear scan of exported ledger lines, and report counts by re-filtering
raw events. None of them import engine decision code.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

ENCLAVE = {"protected-vrf", "research-subnet"}
OUTSIDE = {"internet", "campus", "management"}


# -- reachability ----------------------------------------------------------------


@dataclass
class OracleEndpoint:
    id: str
    kind: str  # vm | share | origin
    zone: str
    project: str | None = None
    protocol: str | None = None


@dataclass
class OracleGateway:
    id: str
    kind: str  # vpn | jumpbox | ssh
    admits_to: str
    mode: str | None


@dataclass
class OracleException:
    id: str
    service: str
    src: str
    dst: str
    direction: str


@dataclass
class OracleTopology:
    zones: set[str]
    gateways: list[OracleGateway] = field(default_factory=list)
    endpoints: dict[str, OracleEndpoint] = field(default_factory=dict)
    exceptions: list[OracleException] = field(default_factory=list)
    whitelists: dict[str, set[str]] = field(default_factory=dict)


@dataclass
class OracleQuery:
    src: str                 # zone id or endpoint id
    dst: str                 # endpoint id (vm, share, or origin)
    service: str
    ctx_mode: str | None = None
    ctx_project: str | None = None
    ctx_authorized: frozenset = frozenset()


@dataclass
class OracleVerdict:
    allowed: bool
    path: list[str]
    gateways: int
    exceptions: int


def _gateway_admits(kind: str, service: str) -> bool:
    if kind == "jumpbox":
        return service == "rdp"
    if kind == "ssh":
        return service == "ssh"
    return True


def bfs_reachable(topo: OracleTopology, q: OracleQuery) -> OracleVerdict:
    """Graph search over zones, gateways, and endpoints with per-query guards."""
    src_ep = topo.endpoints.get(q.src)
    if src_ep is not None:
        src_node, src_zone = f"ep:{q.src}", src_ep.zone
    else:
        src_node, src_zone = f"z:{q.src}", q.src
    dst_ep = topo.endpoints[q.dst]
    dst_node = f"ep:{q.dst}"

    if q.ctx_mode is not None:
        effective_project = q.ctx_project
    elif src_ep is not None:
        effective_project = src_ep.project
    else:
        effective_project = None

    edges: list[tuple[str, str, str]] = []  # (u, v, tag)
    outside_present = [z for z in sorted(topo.zones) if z in OUTSIDE]
    for z1 in outside_present:
        for z2 in outside_present:
            if z1 != z2:
                edges.append((f"z:{z1}", f"z:{z2}", ""))

    def enter_ok(ep: OracleEndpoint) -> bool:
        if ep.kind == "share" and q.service != ep.protocol:
            return False
        if ep.zone in ENCLAVE:
            return effective_project is not None and effective_project == ep.project
        return True

    for ep in topo.endpoints.values():
        if ep.zone in topo.zones and enter_ok(ep):
            edges.append((f"z:{ep.zone}", f"ep:{ep.id}", ""))
    if src_ep is not None:
        edges.append((src_node, f"z:{src_ep.zone}", ""))

    if q.ctx_mode is not None:
        for g in topo.gateways:
            usable = (g.mode == q.ctx_mode
                      and q.ctx_mode in q.ctx_authorized
                      and _gateway_admits(g.kind, q.service))
            if usable and g.admits_to in topo.zones:
                for oz in outside_present:
                    edges.append((f"z:{oz}", f"gw:{g.id}", "gateway"))
                edges.append((f"gw:{g.id}", f"z:{g.admits_to}", ""))

    dst_inside = dst_ep.zone in ENCLAVE
    wanted_direction = "inbound" if dst_inside else "outbound"
    for rule in topo.exceptions:
        if rule.service != q.service or rule.direction != wanted_direction:
            continue
        if rule.src not in (q.src, src_zone):
            continue
        if rule.dst not in (q.dst, dst_ep.zone):
            continue
        if dst_ep.kind == "share" and q.service != dst_ep.protocol:
            continue
        origin = topo.endpoints.get(rule.src)
        src_rule_node = f"ep:{rule.src}" if origin is not None else f"z:{rule.src}"
        edges.append((src_rule_node, dst_node, "exception"))

    if (dst_ep.kind == "origin" and q.service in ("http", "https")
            and src_ep is not None and src_ep.zone in ENCLAVE
            and effective_project is not None
            and q.dst in topo.whitelists.get(effective_project, set())):
        edges.append((src_node, "proxy", ""))
        edges.append(("proxy", dst_node, ""))

    adjacency: dict[str, list[tuple[str, str]]] = {}
    for u, v, tag in edges:
        adjacency.setdefault(u, []).append((v, tag))

    seen = {src_node: (None, "")}
    queue = deque([src_node])
    while queue:
        node = queue.popleft()
        if node == dst_node:
            break
        for nxt, tag in adjacency.get(node, []):
            if nxt not in seen:
                seen[nxt] = (node, tag)
                queue.append(nxt)
    if dst_node not in seen:
        return OracleVerdict(False, [], 0, 0)
    path, tags = [], []
    node = dst_node
    while node is not None:
        path.append(node)
        parent, tag = seen[node]
        tags.append(tag)
        node = parent
    path.reverse()
    return OracleVerdict(True, path,
                         gateways=sum(1 for t in tags if t == "gateway"),
                         exceptions=sum(1 for t in tags if t == "exception"))


# -- classification truth table -----------------------------------------------------


def access_table(tier: str, in_mode_group: bool, in_role_group: bool) -> bool:
    """Direct enumeration of the three-tier table."""
    if tier == "public":
        return True
    if tier == "restricted":
        return in_mode_group or in_role_group
    if tier == "sensitive":
        return in_mode_group
    raise ValueError(tier)


# -- egress table ---------------------------------------------------------------------


def file_egress_table(mode: str, endpoint_managed: bool) -> bool:
    if mode == "rdp":
        return False
    return endpoint_managed


def clipboard_table(mode: str) -> bool:
    return mode != "rdp"


# -- ledger scans ------------------------------------------------------------------------


def resolve_by_scan(export_lines: list[str], arbitrary_user: str, at: int) -> str | None:
    """Linear scan over exported events: find the session that mapped the
    name and bracket it with its close, independent of any index."""
    opened: list[tuple[int, str, str]] = []  # (start, session, principal)
    closed: dict[str, int] = {}
    for line in export_lines:
        event = json.loads(line)
        if event["action"] == "map" and event["detail"].get("arbitrary_user") == arbitrary_user:
            opened.append((event["at"], event["object"], event["detail"]["principal"]))
        elif event["action"] in ("close", "revoke-forced-close"):
            closed.setdefault(event["object"], event["at"])
    for start, session_id, principal in opened:
        end = closed.get(session_id)
        if start <= at and (end is None or at <= end):
            return principal
    return None


def recount_report(export_lines: list[str], project: str, start: int, end: int) -> dict:
    """Re-derive compliance counts straight from raw export lines."""
    events = [json.loads(line) for line in export_lines]
    in_period = [e for e in events if start <= e["at"] <= end]
    mine = [e for e in in_period if e["detail"].get("project") == project]
    sessions: dict[str, int] = {"vpn": 0, "rdp": 0}
    for e in mine:
        if e["action"] == "map":
            sessions[e["detail"]["mode"]] = sessions.get(e["detail"]["mode"], 0) + 1
    provisioned = {e["object"]: e["at"] for e in events
                   if e["action"] == "provision" and e["detail"].get("project") == project}
    destroyed: dict[str, int] = {}
    for e in events:
        if e["action"] == "destroy" and e["detail"].get("project") == project:
            destroyed.setdefault(e["object"], e["at"])
    sessioned = {e["detail"]["vm"] for e in mine if e["action"] == "map"}
    flags = sorted(vm for vm, born in provisioned.items()
                   if born <= end and destroyed.get(vm, end + 1) >= start
                   and vm not in sessioned)
    return {
        "sessions_by_mode": sessions,
        "egress_allowed": sum(1 for e in mine if e["action"] == "egress-allow"),
        "egress_denied": sum(1 for e in mine if e["action"] == "egress-deny"),
        "exception_traversals": sum(
            1 for e in mine
            if e["action"] == "traverse" and e["detail"].get("via", "").startswith("exception")),
        "grants": sum(1 for e in mine if e["action"] == "grant"),
        "revokes": sum(1 for e in mine if e["action"] == "revoke"),
        "efficiency_flags": flags,
    }
