"""Append-only, hash-chained audit ledger.

Each event is chained to its predecessor with a SHA-256 digest over a
canonical JSON encoding, so any mutation of a stored event is detectable.
The ledger also answers the two forensic questions the broker must support:
which real principal owned an arbitrary user at a point in time, and what
happened during a given session.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Callable

from .clock import SimClock
from .errors import (
    NoSessionAtTime,
    UnknownAction,
    UnknownArbitraryUser,
    UnknownProject,
    UnknownSession,
)

GENESIS_HASH = "0" * 64

# Closed action vocabulary. append() rejects anything else so that reports
# stay computable from a fixed set of verbs.
ACTIONS = frozenset(
    {
        "register",
        "deactivate",
        "authn",
        "mfa",
        "membership",
        "project-create",
        "role-assign",
        "proxy-config",
        "grant",
        "revoke",
        "revoke-forced-close",
        "map",
        "attach",
        "credential-mint",
        "credential-destroy",
        "close",
        "egress-allow",
        "egress-deny",
        "export-submit",
        "export-adjudicate",
        "provision",
        "resize",
        "destroy",
        "share-create",
        "acl-set",
        "exception-add",
        "traverse",
        "proxy-fetch",
        "image-submit",
        "image-vet",
        "image-approve",
        "image-deploy",
        "image-revoke",
        "retention-expire",
    }
)

EXPORT_FIELDS = ("seq", "at", "actor", "action", "object", "detail", "prev_hash", "this_hash")


@dataclass(frozen=True)
class AuditEvent:
    seq: int
    at: int
    actor: str
    action: str
    object: str
    detail: dict[str, str]
    prev_hash: str
    this_hash: str

    def export_line(self) -> str:
        record = {
            "seq": self.seq,
            "at": self.at,
            "actor": self.actor,
            "action": self.action,
            "object": self.object,
            "detail": {k: self.detail[k] for k in sorted(self.detail)},
            "prev_hash": self.prev_hash,
            "this_hash": self.this_hash,
        }
        return json.dumps(record, separators=(",", ":"))


def event_hash(seq: int, at: int, actor: str, action: str, object_id: str,
               detail: dict[str, str], prev_hash: str) -> str:
    """Canonical digest of one event; detail keys are sorted for stability."""
    body = json.dumps(
        [seq, at, actor, action, object_id, sorted(detail.items()), prev_hash],
        separators=(",", ":"),
    )
    return hashlib.sha256(body.encode("utf-8")).hexdigest()


@dataclass
class ComplianceReport:
    """Per-project activity counts recomputed purely from ledger events."""

    project_id: str
    period_start: int
    period_end: int
    sessions_by_mode: dict[str, int]
    egress_allowed: int
    egress_denied: int
    exception_traversals: int
    grants: int
    revokes: int
    efficiency_flags: list[str]
    affiliate_stewards: list[str]

    def to_wire(self) -> dict:
        return {
            "project_id": self.project_id,
            "period_start": self.period_start,
            "period_end": self.period_end,
            "sessions_by_mode": dict(self.sessions_by_mode),
            "egress_allowed": self.egress_allowed,
            "egress_denied": self.egress_denied,
            "exception_traversals": self.exception_traversals,
            "grants": self.grants,
            "revokes": self.revokes,
            "efficiency_flags": list(self.efficiency_flags),
            "affiliate_stewards": list(self.affiliate_stewards),
        }


@dataclass
class _MappingSpan:
    # One arbitrary-user tenure: from the session's map event until its close.
    session_id: str
    principal: str
    start: int
    end: int | None = None


class AuditLedger:
    """The append-only event store. There is no update or delete operation."""

    def __init__(self, clock: SimClock):
        self._clock = clock
        self._events: list[AuditEvent] = []
        self._last_hash = GENESIS_HASH
        self._by_session: dict[str, list[int]] = {}
        self._spans: dict[str, list[_MappingSpan]] = {}
        self._span_by_session: dict[str, _MappingSpan] = {}
        # Wired by the broker facade; reports need to know the project exists.
        self.project_exists: Callable[[str], bool] = lambda pid: True

    # -- writing -----------------------------------------------------------

    def append(self, actor: str, action: str, object_id: str,
               detail: dict[str, str] | None = None, at: int | None = None) -> int:
        if action not in ACTIONS:
            raise UnknownAction(f"action {action!r} not in the closed vocabulary")
        detail = dict(detail or {})
        for key, value in detail.items():
            if not isinstance(key, str) or not isinstance(value, str):
                raise TypeError("event detail must be a flat string map")
        at = self._clock.now if at is None else int(at)
        seq = len(self._events) + 1
        digest = event_hash(seq, at, actor, action, object_id, detail, self._last_hash)
        event = AuditEvent(seq, at, actor, action, object_id, detail, self._last_hash, digest)
        self._events.append(event)
        self._last_hash = digest
        self._index(event)
        return seq

    def _index(self, event: AuditEvent) -> None:
        sid = None
        if event.object.startswith("s-") and event.object[2:].isdigit():
            sid = event.object
        elif "session" in event.detail:
            sid = event.detail["session"]
        if sid is not None:
            self._by_session.setdefault(sid, []).append(event.seq)
        if event.action == "map":
            span = _MappingSpan(
                session_id=event.object,
                principal=event.detail["principal"],
                start=event.at,
            )
            self._spans.setdefault(event.detail["arbitrary_user"], []).append(span)
            self._span_by_session[event.object] = span
        elif event.action in ("close", "revoke-forced-close"):
            span = self._span_by_session.get(event.object)
            if span is not None and span.end is None:
                span.end = event.at

    # -- reading -----------------------------------------------------------

    @property
    def events(self) -> list[AuditEvent]:
        return list(self._events)

    def __len__(self) -> int:
        return len(self._events)

    def head_count(self) -> int:
        """Externally stored event count; pairs with the chain to detect truncation."""
        return len(self._events)

    def resolve_identity(self, arbitrary_user: str, at: int) -> str:
        spans = self._spans.get(arbitrary_user)
        if not spans:
            raise UnknownArbitraryUser(arbitrary_user)
        for span in spans:
            if span.start <= at and (span.end is None or at <= span.end):
                return span.principal
        raise NoSessionAtTime(f"{arbitrary_user} owned no session at t={at}")

    def reconstruct_session(self, session_id: str) -> list[AuditEvent]:
        seqs = self._by_session.get(session_id)
        if not seqs:
            raise UnknownSession(session_id)
        return [self._events[s - 1] for s in seqs]

    def verify_chain(self) -> tuple[bool, int | None]:
        """Recompute every digest; returns (ok, first bad seq).

        A truncated suffix is not detectable by the chain alone; callers
        compare len() against the externally stored head count for that.
        """
        prev = GENESIS_HASH
        for i, event in enumerate(self._events):
            if event.seq != i + 1 or event.prev_hash != prev:
                return False, i + 1
            digest = event_hash(event.seq, event.at, event.actor, event.action,
                                event.object, event.detail, event.prev_hash)
            if digest != event.this_hash:
                return False, event.seq
            prev = event.this_hash
        return True, None

    def export_lines(self) -> list[str]:
        return [e.export_line() for e in self._events]

    def export_text(self) -> str:
        lines = self.export_lines()
        return "\n".join(lines) + ("\n" if lines else "")

    # -- reports -----------------------------------------------------------

    def compliance_report(self, project_id: str, period_start: int,
                          period_end: int) -> ComplianceReport:
        if not self.project_exists(project_id):
            raise UnknownProject(project_id)
        in_period = [e for e in self._events if period_start <= e.at <= period_end]
        of_project = [e for e in in_period if e.detail.get("project") == project_id]

        sessions_by_mode: dict[str, int] = {"vpn": 0, "rdp": 0}
        for e in of_project:
            if e.action == "map":
                mode = e.detail.get("mode", "")
                sessions_by_mode[mode] = sessions_by_mode.get(mode, 0) + 1
        egress_allowed = sum(1 for e in of_project if e.action == "egress-allow")
        egress_denied = sum(1 for e in of_project if e.action == "egress-deny")
        traversals = sum(
            1 for e in of_project
            if e.action == "traverse" and e.detail.get("via", "").startswith("exception")
        )
        grants = sum(1 for e in of_project if e.action == "grant")
        revokes = sum(1 for e in of_project if e.action == "revoke")

        # A VM that existed during the period but hosted no session is flagged
        # so its allocation can be questioned.
        provisioned: dict[str, int] = {}
        destroyed: dict[str, int] = {}
        for e in self._events:
            if e.detail.get("project") != project_id:
                continue
            if e.action == "provision":
                provisioned[e.object] = e.at
            elif e.action == "destroy":
                destroyed.setdefault(e.object, e.at)
        sessioned = {e.detail["vm"] for e in of_project if e.action == "map" and "vm" in e.detail}
        flags = sorted(
            vm for vm, born in provisioned.items()
            if born <= period_end
            and destroyed.get(vm, period_end + 1) >= period_start
            and vm not in sessioned
        )

        # Affiliates acting as stewards are permitted but surfaced for review.
        affiliates = {
            e.detail["netid"] for e in self._events
            if e.action == "register" and e.detail.get("affiliation") == "affiliate"
        }
        steward_lists = [
            e.detail.get("stewards", "") for e in self._events
            if e.action == "project-create" and e.detail.get("project") == project_id
        ]
        stewards: set[str] = set()
        for entry in steward_lists:
            stewards.update(s for s in entry.split(",") if s)
        affiliate_stewards = sorted(stewards & affiliates)

        return ComplianceReport(
            project_id=project_id,
            period_start=period_start,
            period_end=period_end,
            sessions_by_mode=sessions_by_mode,
            egress_allowed=egress_allowed,
            egress_denied=egress_denied,
            exception_traversals=traversals,
            grants=grants,
            revokes=revokes,
            efficiency_flags=flags,
            affiliate_stewards=affiliate_stewards,
        )
