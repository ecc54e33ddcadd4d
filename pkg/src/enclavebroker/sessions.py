"""Session broker: ephemeral brokered sessions on retained VMs.

A real principal never logs into a VM directly. The broker maps them onto a
per-VM arbitrary user, mints a single-session secret for that user, mirrors
the principal's group permissions onto the arbitrary user for the duration
of the session, and destroys the secret at close. The VM itself is retained
for a configurable period so its disk state survives between sessions, but
each new session gets a fresh secret; a captured secret is worthless once
its session closes.

Two non-disclosure rules are load-bearing and enforced here structurally:
the client view never carries the credential secret, and messages addressed
to a VM never carry the real principal's identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .clock import SimClock
from .enclave import AccessContext, Enclave, INTERNET, VmState
from .errors import (
    AccessDenied,
    CredentialAlreadyActive,
    MfaRequired,
    NoPath,
    RetentionExpired,
    SessionAlreadyClosed,
    SessionAlreadyOpen,
    SessionClosed,
    UnknownSession,
    UnmanagedEndpoint,
    VmUnavailable,
)
from .identity import AuthenticatedPrincipal, Directory
from .ledger import AuditLedger
from .model import AccessMode
from .policy import PolicyEngine, Project

DAY = 86400
DEFAULT_VM_CPU = 4
DEFAULT_VM_RAM = 16

# The service each access mode rides once inside the enclave: RDP sessions
# terminate at the jumpbox protocol, VPN sessions tunnel a shell.
MODE_SERVICE = {AccessMode.RDP: "rdp", AccessMode.VPN: "ssh"}


class CredentialState(str, Enum):
    ACTIVE = "active"
    DESTROYED = "destroyed"


class SessionState(str, Enum):
    OPEN = "open"
    CLOSED = "closed"


class AuthOutcome(str, Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected"


@dataclass
class ArbitraryUser:
    name: str
    vm_id: str
    created_at: int
    shadow_groups: set[str] = field(default_factory=set)


@dataclass
class EphemeralCredential:
    id: str
    arbitrary_user: str
    secret: str
    session_id: str
    state: CredentialState = CredentialState.ACTIVE


@dataclass
class Session:
    id: str
    principal: str
    project_id: str
    mode: AccessMode
    vm_id: str
    arbitrary_user: str
    credential_id: str
    opened_at: int
    endpoint_managed: bool
    gateway_path: list[str]
    state: SessionState = SessionState.OPEN
    closed_at: int | None = None


@dataclass
class RetentionBinding:
    principal: str
    project_id: str
    vm_id: str
    retained_until: int


@dataclass(frozen=True)
class ClientView:
    """What the user's client is told. No secret field exists, by contract."""

    session_id: str
    vm_id: str
    gateway_path: tuple[str, ...]
    mode: str

    def to_wire(self) -> dict:
        return {
            "session_id": self.session_id,
            "vm_id": self.vm_id,
            "gateway_path": list(self.gateway_path),
            "mode": self.mode,
        }


class SessionBroker:
    def __init__(self, directory: Directory, policy: PolicyEngine, enclave: Enclave,
                 ledger: AuditLedger, clock: SimClock, rng, *,
                 retention_days: int = 30, allow_concurrent: bool = False):
        self._directory = directory
        self._policy = policy
        self._enclave = enclave
        self._ledger = ledger
        self._clock = clock
        self._rng = rng
        self.retention_days = retention_days
        self.allow_concurrent = allow_concurrent
        self._sessions: dict[str, Session] = {}
        self._credentials: dict[str, EphemeralCredential] = {}
        self._by_secret: dict[str, str] = {}
        self._active_by_user: dict[str, str] = {}
        self._vm_users: dict[str, ArbitraryUser] = {}
        self._used_names: set[str] = set()
        self._used_secrets: set[str] = set()
        self._bindings: dict[tuple[str, str], RetentionBinding] = {}
        self._session_seq = 0
        self._credential_seq = 0
        # Recorded message traces, scanned by the non-disclosure checks.
        self.client_messages: list[dict] = []
        self.vm_messages: list[dict] = []

    # -- lookups ----------------------------------------------------------------

    def session(self, session_id: str) -> Session:
        session = self._sessions.get(session_id)
        if session is None:
            raise UnknownSession(session_id)
        return session

    def credential(self, credential_id: str) -> EphemeralCredential:
        return self._credentials[credential_id]

    def binding(self, principal: str, project_id: str) -> RetentionBinding | None:
        return self._bindings.get((principal, project_id))

    def open_sessions(self) -> list[Session]:
        return [s for _, s in sorted(self._sessions.items())
                if s.state is SessionState.OPEN]

    # -- naming and secrets -------------------------------------------------------

    def _mint_name(self) -> str:
        while True:
            name = f"u-{self._rng.getrandbits(32):08x}"
            if name not in self._used_names and not self._directory.has_user(name):
                self._used_names.add(name)
                return name

    def _mint_secret(self) -> str:
        while True:
            secret = f"{self._rng.getrandbits(128):032x}"
            if secret not in self._used_secrets:
                self._used_secrets.add(secret)
                return secret

    def mint_credential(self, arbitrary_user: str, session_id: str) -> EphemeralCredential:
        if arbitrary_user in self._active_by_user:
            raise CredentialAlreadyActive(arbitrary_user)
        self._credential_seq += 1
        credential = EphemeralCredential(
            id=f"cred-{self._credential_seq:06d}",
            arbitrary_user=arbitrary_user,
            secret=self._mint_secret(),
            session_id=session_id,
        )
        self._credentials[credential.id] = credential
        self._by_secret[credential.secret] = credential.id
        self._active_by_user[arbitrary_user] = credential.id
        return credential

    def _destroy_credential(self, credential_id: str, session: Session) -> None:
        credential = self._credentials[credential_id]
        if credential.state is CredentialState.DESTROYED:
            return
        credential.state = CredentialState.DESTROYED
        self._active_by_user.pop(credential.arbitrary_user, None)
        self._ledger.append(session.principal, "credential-destroy", credential.id, {
            "session": session.id,
            "project": session.project_id,
        })

    # -- opening ------------------------------------------------------------------

    def open_session(self, principal: AuthenticatedPrincipal, project_id: str,
                     mode: AccessMode | str, endpoint_managed: bool,
                     now: int | None = None, *,
                     src_zone: str = INTERNET) -> tuple[Session, ClientView]:
        return self._start(principal, project_id, AccessMode(mode), endpoint_managed,
                           self._clock.now if now is None else now,
                           src_zone=src_zone, require_binding=False)

    def resume_session(self, principal: AuthenticatedPrincipal, project_id: str,
                       mode: AccessMode | str, endpoint_managed: bool,
                       now: int | None = None, *,
                       src_zone: str = INTERNET) -> tuple[Session, ClientView]:
        return self._start(principal, project_id, AccessMode(mode), endpoint_managed,
                           self._clock.now if now is None else now,
                           src_zone=src_zone, require_binding=True)

    def _start(self, principal: AuthenticatedPrincipal, project_id: str,
               mode: AccessMode, endpoint_managed: bool, now: int, *,
               src_zone: str, require_binding: bool) -> tuple[Session, ClientView]:
        if not principal.mfa_passed:
            raise MfaRequired(principal.netid)
        project = self._policy.get_project(project_id)
        decision = self._policy.check_access(principal, project_id, mode)
        if not decision.allowed:
            raise AccessDenied(decision.reason)
        if mode is AccessMode.VPN and not endpoint_managed:
            raise UnmanagedEndpoint("vpn access requires a managed endpoint")
        netid = principal.netid
        if not self.allow_concurrent:
            for session in self.open_sessions():
                if session.principal == netid and session.project_id == project_id:
                    raise SessionAlreadyOpen(session.id)

        service = MODE_SERVICE[mode]
        binding = self._bindings.get((netid, project_id))
        vm = None
        reused = False
        if binding is not None:
            candidate = self._enclave.vm(binding.vm_id)
            if candidate.state is VmState.DESTROYED:
                if require_binding:
                    raise VmUnavailable(binding.vm_id)
                del self._bindings[(netid, project_id)]
            elif now > binding.retained_until:
                if require_binding:
                    raise RetentionExpired(f"retained until {binding.retained_until}")
                # Lazily reclaim: an expired machine is never reused.
                del self._bindings[(netid, project_id)]
                self._enclave.destroy_vm(binding.vm_id)
                self._ledger.append("broker", "retention-expire", binding.vm_id, {
                    "project": project_id,
                    "principal": netid,
                    "vm": binding.vm_id,
                }, at=now)
            else:
                vm = candidate
                reused = True
        elif require_binding:
            raise RetentionExpired(f"no retained vm for {netid} on {project_id}")

        if vm is None:
            if self._enclave.find_gateway(project.zone, mode, service) is None:
                raise NoPath(f"no {mode.value} gateway admits to {project.zone}")
            vm = self._enclave.provision_vm(project_id, project.zone,
                                            DEFAULT_VM_CPU, DEFAULT_VM_RAM)
            arbitrary = ArbitraryUser(name=self._mint_name(), vm_id=vm.id, created_at=now)
            self._vm_users[vm.id] = arbitrary
        else:
            del self._bindings[(netid, project_id)]
            vm.state = VmState.RUNNING
            # The arbitrary-user name persists with the retained VM so file
            # ownership on the disk stays coherent; only the secret is new.
            arbitrary = self._vm_users[vm.id]

        authorized = frozenset(self._policy.authorize_mode(principal, project_id))
        ctx = AccessContext(src_zone=src_zone, mode=mode, project_id=project_id,
                            authorized_modes=authorized)
        path = self._enclave.is_reachable(ctx, vm.id, service)
        if not path.allowed:
            if not reused:
                self._enclave.destroy_vm(vm.id)
            raise NoPath(path.reason)

        self._session_seq += 1
        session_id = f"s-{self._session_seq:06d}"
        credential = self.mint_credential(arbitrary.name, session_id)
        session = Session(
            id=session_id,
            principal=netid,
            project_id=project_id,
            mode=mode,
            vm_id=vm.id,
            arbitrary_user=arbitrary.name,
            credential_id=credential.id,
            opened_at=now,
            endpoint_managed=endpoint_managed,
            gateway_path=list(path.path),
        )
        self._sessions[session_id] = session

        self._ledger.append(netid, "authn", session_id, {
            "netid": netid,
            "method": principal.method.value,
            "mfa": "true",
            "project": project_id,
        }, at=now)
        self._ledger.append(netid, "map", session_id, {
            "principal": netid,
            "arbitrary_user": arbitrary.name,
            "vm": vm.id,
            "mode": mode.value,
            "project": project_id,
            "resumed": "true" if reused else "false",
        }, at=now)

        self.align_groups(session_id)
        attached = self._attached_shares(project, netid)
        self._ledger.append(netid, "attach", session_id, {
            "shares": ",".join(attached),
            "project": project_id,
        }, at=now)
        self._ledger.append(netid, "credential-mint", credential.id, {
            "session": session_id,
            "project": project_id,
        }, at=now)

        view = ClientView(session_id=session_id, vm_id=vm.id,
                          gateway_path=tuple(path.path), mode=mode.value)
        self.client_messages.append(view.to_wire())
        # The VM learns only the arbitrary identity, never the principal's.
        self.vm_messages.append({"to": vm.id, "account": arbitrary.name})
        return session, view

    def _attached_shares(self, project: Project, netid: str) -> list[str]:
        attached = []
        for share_id in sorted(project.shares):
            share = self._enclave.share(share_id)
            if any(self._directory.is_member(g, netid) for g in sorted(share.acl_groups)):
                attached.append(share_id)
        return attached

    # -- group alignment -----------------------------------------------------------

    def _relevant_groups(self, project: Project) -> list[str]:
        names = [project.vpn_group, project.rdp_group]
        names.extend(sorted(project.role_rules))
        for share_id in sorted(project.shares):
            for g in sorted(self._enclave.share(share_id).acl_groups):
                if g not in names:
                    names.append(g)
        return names

    def align_groups(self, session_id: str) -> list[str]:
        session = self.session(session_id)
        if session.state is not SessionState.OPEN:
            raise SessionClosed(session_id)
        project = self._policy.get_project(session.project_id)
        arbitrary = self._vm_users[session.vm_id]
        created = []
        for group_name in self._relevant_groups(project):
            if self._directory.is_member(group_name, session.principal):
                self._directory.shadow_attach(group_name, arbitrary.name)
                if group_name not in arbitrary.shadow_groups:
                    arbitrary.shadow_groups.add(group_name)
                    created.append(group_name)
        return created

    def _unalign_groups(self, session: Session) -> None:
        arbitrary = self._vm_users.get(session.vm_id)
        if arbitrary is None:
            return
        for group_name in sorted(arbitrary.shadow_groups):
            self._directory.shadow_detach(group_name, arbitrary.name)
        arbitrary.shadow_groups.clear()

    def can_read_share(self, share_id: str, identity: str) -> bool:
        """ACL check for either a real principal or an in-session arbitrary user."""
        share = self._enclave.share(share_id)
        return any(self._directory.effective_member(g, identity)
                   for g in sorted(share.acl_groups))

    # -- authentication (the attack surface) ----------------------------------------

    def authenticate_to_vm(self, secret: str, vm_id: str,
                           now: int | None = None) -> AuthOutcome:
        credential_id = self._by_secret.get(secret)
        if credential_id is None:
            return AuthOutcome.REJECTED
        credential = self._credentials[credential_id]
        if credential.state is not CredentialState.ACTIVE:
            return AuthOutcome.REJECTED
        session = self._sessions[credential.session_id]
        if session.state is not SessionState.OPEN or session.vm_id != vm_id:
            return AuthOutcome.REJECTED
        return AuthOutcome.ACCEPTED

    # -- closing -------------------------------------------------------------------

    def close_session(self, session_id: str, now: int | None = None) -> Session:
        now = self._clock.now if now is None else now
        session = self.session(session_id)
        if session.state is not SessionState.OPEN:
            raise SessionAlreadyClosed(session_id)
        self._finish(session, now, action="close", retain=True)
        return session

    def force_close_for(self, netid: str, project_id: str,
                        mode: AccessMode) -> list[str]:
        """Revocation cascade: close matching open sessions immediately."""
        closed = []
        for session in self.open_sessions():
            if (session.principal == netid and session.project_id == project_id
                    and session.mode == mode):
                self._finish(session, self._clock.now, action="revoke-forced-close",
                             retain=True)
                closed.append(session.id)
        return closed

    def handle_vm_destroyed(self, vm_id: str) -> None:
        """VM teardown closes any session riding it; nothing is retained."""
        for session in self.open_sessions():
            if session.vm_id == vm_id:
                self._finish(session, self._clock.now, action="close",
                             retain=False, cause="vm-destroyed")

    def _finish(self, session: Session, now: int, *, action: str,
                retain: bool, cause: str | None = None) -> None:
        self._destroy_credential(session.credential_id, session)
        self._unalign_groups(session)
        session.state = SessionState.CLOSED
        session.closed_at = now
        detail = {
            "project": session.project_id,
            "vm": session.vm_id,
            "mode": session.mode.value,
        }
        if retain:
            project = self._policy.get_project(session.project_id)
            days = project.retention_days if project.retention_days is not None \
                else self.retention_days
            retained_until = now + days * DAY
            self._bindings[(session.principal, session.project_id)] = RetentionBinding(
                principal=session.principal,
                project_id=session.project_id,
                vm_id=session.vm_id,
                retained_until=retained_until,
            )
            vm = self._enclave.vm(session.vm_id)
            if vm.state is VmState.RUNNING:
                vm.state = VmState.RETAINED
            detail["retained_until"] = str(retained_until)
        if cause:
            detail["cause"] = cause
        self._ledger.append(session.principal, action, session.id, detail, at=now)

    # -- retention sweep --------------------------------------------------------------

    def expire_retained(self, now: int | None = None) -> list[str]:
        now = self._clock.now if now is None else now
        reclaimed = []
        for key in sorted(self._bindings):
            binding = self._bindings[key]
            if binding.retained_until >= now:
                continue
            del self._bindings[key]
            vm = self._enclave.vm(binding.vm_id)
            if vm.state is not VmState.DESTROYED:
                self._enclave.destroy_vm(binding.vm_id)
                reclaimed.append(binding.vm_id)
            self._ledger.append("broker", "retention-expire", binding.vm_id, {
                "project": binding.project_id,
                "principal": binding.principal,
                "vm": binding.vm_id,
            }, at=now)
        return reclaimed
