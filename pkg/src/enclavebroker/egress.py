"""Egress control: mode-differentiated data removal plus adjudicated export.

RDP sessions can never move data out themselves; clipboard features are
deactivated in both directions and file egress is denied outright. VPN
sessions from managed endpoints may move data. The sanctioned path around
the RDP wall is an export request adjudicated by a project's honest broker,
who must not be the requester.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .clock import SimClock
from .errors import (
    AlreadyAdjudicated,
    EmptyPayload,
    EmptyRationale,
    SelfAdjudication,
    SessionClosed,
    Unauthorized,
    UnknownExportRequest,
)
from .ledger import AuditLedger
from .model import AccessMode, Decision, Verdict
from .policy import PolicyEngine
from .sessions import SessionBroker, SessionState


class EgressKind(str, Enum):
    CLIPBOARD_OUT = "clipboard-out"
    FILE_OUT = "file-out"


class ExportStatus(str, Enum):
    PENDING = "pending"
    APPROVED = "approved"
    DENIED = "denied"


@dataclass
class EgressAttempt:
    session_id: str
    kind: EgressKind
    object_descriptor: str
    at: int
    verdict: Verdict


@dataclass
class ExportRequest:
    id: str
    project_id: str
    requester: str
    payload: str
    status: ExportStatus
    submitted_at: int
    broker: str | None = None
    rationale: str = ""
    adjudicated_at: int | None = None
    release_token: str | None = None

    def to_wire(self) -> dict:
        return {
            "request": self.id,
            "project": self.project_id,
            "requester": self.requester,
            "payload": self.payload,
            "status": self.status.value,
            "broker": self.broker,
            "rationale": self.rationale,
            "release_token": self.release_token,
        }


def decide_clipboard(mode: AccessMode) -> tuple[Verdict, str]:
    if mode is AccessMode.RDP:
        return Verdict.DENY, "rdp-clipboard-disabled"
    return Verdict.ALLOW, "vpn-clipboard"


def decide_file(mode: AccessMode, endpoint_managed: bool) -> tuple[Verdict, str]:
    if mode is AccessMode.RDP:
        return Verdict.DENY, "rdp-no-egress"
    if endpoint_managed:
        return Verdict.ALLOW, "vpn-managed-egress"
    return Verdict.DENY, "vpn-unmanaged-endpoint"


class EgressControl:
    def __init__(self, sessions: SessionBroker, policy: PolicyEngine,
                 ledger: AuditLedger, clock: SimClock, rng):
        self._sessions = sessions
        self._policy = policy
        self._ledger = ledger
        self._clock = clock
        self._rng = rng
        self.attempts: list[EgressAttempt] = []
        self._requests: dict[str, ExportRequest] = {}
        self._request_seq = 0

    def _open_session(self, session_id: str):
        session = self._sessions.session(session_id)
        if session.state is not SessionState.OPEN:
            raise SessionClosed(session_id)
        return session

    def _log(self, session, kind: str, verdict: Verdict, extra: dict[str, str],
             at: int) -> None:
        action = "egress-allow" if verdict is Verdict.ALLOW else "egress-deny"
        detail = {
            "session": session.id,
            "project": session.project_id,
            "mode": session.mode.value,
            "kind": kind,
        }
        detail.update(extra)
        # In-session actions are attributed to the arbitrary user; the ledger
        # resolves them back to the principal.
        self._ledger.append(session.arbitrary_user, action, session.id, detail, at=at)

    def attempt_clipboard(self, session_id: str, direction: str,
                          now: int | None = None) -> Decision:
        now = self._clock.now if now is None else now
        session = self._open_session(session_id)
        if direction not in ("in", "out"):
            raise ValueError(f"clipboard direction {direction!r}")
        verdict, reason = decide_clipboard(session.mode)
        if direction == "out":
            self.attempts.append(EgressAttempt(session_id, EgressKind.CLIPBOARD_OUT,
                                               "clipboard", now, verdict))
        self._log(session, "clipboard", verdict, {"direction": direction}, now)
        return Decision(verdict, reason)

    def attempt_file_egress(self, session_id: str, object_descriptor: str,
                            now: int | None = None) -> Decision:
        now = self._clock.now if now is None else now
        session = self._open_session(session_id)
        verdict, reason = decide_file(session.mode, session.endpoint_managed)
        self.attempts.append(EgressAttempt(session_id, EgressKind.FILE_OUT,
                                           object_descriptor, now, verdict))
        self._log(session, "file", verdict, {"object": object_descriptor}, now)
        return Decision(verdict, reason)

    # -- honest-broker export ---------------------------------------------------

    def submit_export(self, session_id: str, payload: str,
                      now: int | None = None) -> ExportRequest:
        now = self._clock.now if now is None else now
        session = self._open_session(session_id)
        if not payload or not payload.strip():
            raise EmptyPayload("export payload descriptor is empty")
        self._request_seq += 1
        request = ExportRequest(
            id=f"req-{self._request_seq:04d}",
            project_id=session.project_id,
            requester=session.principal,
            payload=payload,
            status=ExportStatus.PENDING,
            submitted_at=now,
        )
        self._requests[request.id] = request
        self._ledger.append(session.arbitrary_user, "export-submit", request.id, {
            "session": session.id,
            "project": session.project_id,
            "requester": session.principal,
            "payload": payload,
        }, at=now)
        return request

    def request(self, request_id: str) -> ExportRequest:
        request = self._requests.get(request_id)
        if request is None:
            raise UnknownExportRequest(request_id)
        return request

    def pending_requests(self, project_id: str | None = None) -> list[ExportRequest]:
        return [r for _, r in sorted(self._requests.items())
                if r.status is ExportStatus.PENDING
                and (project_id is None or r.project_id == project_id)]

    def adjudicate_export(self, broker: str, request_id: str, verdict: str,
                          rationale: str, now: int | None = None) -> ExportRequest:
        now = self._clock.now if now is None else now
        request = self.request(request_id)
        if request.status is not ExportStatus.PENDING:
            raise AlreadyAdjudicated(request_id)
        project = self._policy.get_project(request.project_id)
        if broker not in project.brokers:
            raise Unauthorized(f"{broker} does not hold the honest-broker role")
        if broker == request.requester:
            raise SelfAdjudication(broker)
        if not rationale or not rationale.strip():
            raise EmptyRationale(request_id)
        if verdict not in ("approved", "denied"):
            raise ValueError(f"verdict {verdict!r}")
        request.status = ExportStatus(verdict)
        request.broker = broker
        request.rationale = rationale
        request.adjudicated_at = now
        detail = {
            "request": request.id,
            "project": request.project_id,
            "requester": request.requester,
            "broker": broker,
            "verdict": verdict,
        }
        if request.status is ExportStatus.APPROVED:
            request.release_token = f"rel-{self._rng.getrandbits(64):016x}"
            detail["release_token"] = request.release_token
        self._ledger.append(broker, "export-adjudicate", request.id, detail, at=now)
        return request
