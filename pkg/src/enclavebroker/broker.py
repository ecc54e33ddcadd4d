"""Broker facade: wires the modules together and exposes every operation
through one dispatch table shared by the CLI, the scenario runner, and the
wire service.

All state-mutating calls funnel through a single lock, which is the
serialization point promised by each module's concurrency contract.
"""

from __future__ import annotations

import random
import threading
from typing import Any, Callable

from .clock import SimClock
from .egress import EgressControl
from .enclave import AccessContext, Enclave, INTERNET
from .errors import MfaRequired, Unauthorized, UnknownOp
from .identity import (
    Affiliation,
    AuthenticatedPrincipal,
    Directory,
    FederatedAssertion,
    GroupKind,
)
from .ledger import AuditLedger
from .model import AccessMode, Decision
from .pipeline import DeliveryPipeline
from .policy import PolicyEngine
from .sessions import SessionBroker


class Broker:
    def __init__(self, *, seed: int = 0, start_time: int = 0,
                 retention_days: int = 30, allow_concurrent_sessions: bool = False):
        self.clock = SimClock(start_time)
        self.rng = random.Random(seed)
        self.seed = seed
        self.ledger = AuditLedger(self.clock)
        self.directory = Directory(self.ledger, self.clock)
        self.policy = PolicyEngine(self.directory, self.ledger, self.clock)
        self.enclave = Enclave(self.ledger, self.clock, self.rng)
        self.sessions = SessionBroker(
            self.directory, self.policy, self.enclave, self.ledger, self.clock,
            self.rng, retention_days=retention_days,
            allow_concurrent=allow_concurrent_sessions,
        )
        self.egress = EgressControl(self.sessions, self.policy, self.ledger,
                                    self.clock, self.rng)
        self.pipeline = DeliveryPipeline(self.directory, self.policy, self.enclave,
                                         self.ledger, self.clock)
        # Cross-module wiring. Each module keeps its own contract; these
        # callbacks are the only seams between them.
        self.directory.steward_lookup = self.policy.stewards_of
        self.directory.mode_group_delegate = self._mode_group_change
        self.policy.on_revoke = self.sessions.force_close_for
        self.enclave.project_registry = self.policy
        self.enclave.is_admin = self.directory.is_admin
        self.enclave.group_exists = self.directory.has_group
        self.enclave.whitelist_lookup = self.policy.proxy_whitelist_of
        self.enclave.on_vm_destroyed = self.sessions.handle_vm_destroyed
        self.ledger.project_exists = self.policy.has_project

        self._lock = threading.RLock()
        self._authenticated: dict[str, AuthenticatedPrincipal] = {}
        self._ops: dict[str, Callable[[dict], Any]] = self._build_ops()

    def _mode_group_change(self, actor: str, project_id: str, netid: str,
                           mode: str, action: str):
        if action == "add":
            self.policy.grant_access(actor, project_id, netid, mode)
        else:
            self.policy.revoke_access(actor, project_id, netid, mode)
        project = self.policy.get_project(project_id)
        return self.directory.group(project.mode_group(AccessMode(mode)))

    # -- principals -------------------------------------------------------------

    def principal(self, netid: str) -> AuthenticatedPrincipal:
        principal = self._authenticated.get(netid)
        if principal is None or not principal.mfa_passed:
            raise MfaRequired(netid)
        return principal

    def check_reachable(self, src, dst: str, service: str) -> Decision:
        """Reachability check that also records exception-boundary traversals."""
        decision = self.enclave.is_reachable(src, dst, service)
        if decision.allowed and decision.reason.startswith("exception:"):
            dst_project = ""
            vm = self.enclave.vms.get(dst)
            if vm is not None:
                dst_project = vm.project_id
            elif dst in self.enclave.shares:
                dst_project = self.enclave.shares[dst].project_id
            self.ledger.append("broker", "traverse", dst, {
                "via": decision.reason,
                "service": service,
                "project": dst_project,
                "path": ">".join(decision.path),
            })
        return decision

    # -- dispatch ----------------------------------------------------------------

    def op(self, name: str, args: dict | None = None) -> Any:
        handler = self._ops.get(name)
        if handler is None:
            raise UnknownOp(name)
        with self._lock:
            return handler(dict(args or {}))

    @property
    def op_names(self) -> list[str]:
        return sorted(self._ops)

    def _build_ops(self) -> dict[str, Callable[[dict], Any]]:
        return {
            # clock
            "advance": self._op_advance,
            # identity
            "register_user": self._op_register_user,
            "deactivate_user": self._op_deactivate_user,
            "assert_federated": self._op_assert_federated,
            "verify_mfa": self._op_verify_mfa,
            "create_group": self._op_create_group,
            "set_membership": self._op_set_membership,
            # policy
            "register_project": self._op_register_project,
            "grant_access": self._op_grant_access,
            "revoke_access": self._op_revoke_access,
            "check_access": self._op_check_access,
            "authorize_mode": self._op_authorize_mode,
            "set_proxy_whitelist": self._op_set_proxy_whitelist,
            "set_brokers": self._op_set_brokers,
            # enclave
            "provision_vm": self._op_provision_vm,
            "resize_vm": self._op_resize_vm,
            "destroy_vm": self._op_destroy_vm,
            "read_disk": self._op_read_disk,
            "write_disk": self._op_write_disk,
            "create_share": self._op_create_share,
            "set_share_acl": self._op_set_share_acl,
            "is_reachable": self._op_is_reachable,
            "register_exception": self._op_register_exception,
            "proxy_fetch": self._op_proxy_fetch,
            # sessions
            "open_session": self._op_open_session,
            "resume_session": self._op_resume_session,
            "close_session": self._op_close_session,
            "mint_credential": self._op_mint_credential,
            "align_groups": self._op_align_groups,
            "authenticate_to_vm": self._op_authenticate_to_vm,
            "expire_retained": self._op_expire_retained,
            # egress
            "attempt_clipboard": self._op_attempt_clipboard,
            "attempt_file_egress": self._op_attempt_file_egress,
            "submit_export": self._op_submit_export,
            "adjudicate_export": self._op_adjudicate_export,
            # pipeline
            "submit_image": self._op_submit_image,
            "vet_image": self._op_vet_image,
            "approve_image": self._op_approve_image,
            "deploy_image": self._op_deploy_image,
            "update_deployment": self._op_update_deployment,
            "revoke_image": self._op_revoke_image,
            # ledger
            "resolve_identity": self._op_resolve_identity,
            "reconstruct_session": self._op_reconstruct_session,
            "verify_chain": self._op_verify_chain,
            "compliance_report": self._op_compliance_report,
            "export_ledger": self._op_export_ledger,
        }

    # -- handlers ------------------------------------------------------------------

    def _op_advance(self, args: dict) -> dict:
        now = self.clock.advance(int(args["seconds"]))
        return {"now": now}

    def _op_register_user(self, args: dict) -> dict:
        user = self.directory.register_user(
            args["netid"], Affiliation(args.get("affiliation", "member")),
            args.get("sponsor"), mfa_secret=args.get("mfa_secret"),
            actor=args.get("actor", "broker"),
        )
        return {"netid": user.netid, "affiliation": user.affiliation.value,
                "sponsor": user.sponsor, "active": user.active}

    def _op_deactivate_user(self, args: dict) -> dict:
        deactivated = self.directory.deactivate_user(args["actor"], args["netid"])
        return {"deactivated": deactivated}

    def _op_assert_federated(self, args: dict) -> dict:
        assertion = FederatedAssertion(
            issuer=args["issuer"], subject=args["subject"],
            issued_at=int(args["issued_at"]), expires_at=int(args["expires_at"]),
            mfa_satisfied=bool(args.get("mfa_satisfied", False)),
            attributes=dict(args.get("attributes", {})),
        )
        principal = self.directory.assert_federated(
            assertion, int(args.get("now", self.clock.now)))
        if principal.mfa_passed:
            self._authenticated[principal.netid] = principal
        return {"netid": principal.netid, "method": principal.method.value,
                "mfa_passed": principal.mfa_passed}

    def _op_verify_mfa(self, args: dict) -> dict:
        principal = self.directory.verify_mfa(args["netid"], args.get("proof"))
        self._authenticated[principal.netid] = principal
        return {"netid": principal.netid, "method": principal.method.value,
                "mfa_passed": principal.mfa_passed}

    def _op_create_group(self, args: dict) -> dict:
        actor = args.get("actor", "broker")
        if not self.directory.is_admin(actor):
            raise Unauthorized(f"{actor} is not a platform administrator")
        group = self.directory.create_group(
            args["name"], GroupKind(args.get("kind", "role")),
            args.get("owning_project"), actor=actor)
        return {"group": group.name, "kind": group.kind.value}

    def _op_set_membership(self, args: dict) -> dict:
        group = self.directory.set_membership(
            args["actor"], args["group"], args["netid"], args["action"])
        return {"group": group.name, "members": sorted(group.members)}

    def _op_register_project(self, args: dict) -> dict:
        project = self.policy.register_project(
            args["actor"], args["id"], args["classification"],
            args.get("stewards", []), args.get("role_rules"),
            zone=args.get("zone", "protected-vrf"),
            brokers=args.get("brokers"),
            proxy_whitelist=args.get("proxy_whitelist"),
            retention_days=args.get("retention_days"),
        )
        return {"project": project.id, "tier": project.classification.value,
                "vpn_group": project.vpn_group, "rdp_group": project.rdp_group,
                "zone": project.zone}

    def _op_grant_access(self, args: dict) -> dict:
        record = self.policy.grant_access(args["actor"], args["project"],
                                          args["netid"], args["mode"])
        return record.to_wire()

    def _op_revoke_access(self, args: dict) -> dict:
        record = self.policy.revoke_access(args["actor"], args["project"],
                                           args["netid"], args["mode"])
        return record.to_wire()

    def _op_check_access(self, args: dict) -> dict:
        principal = self.principal(args["netid"])
        return self.policy.check_access(principal, args["project"], args["mode"]).to_wire()

    def _op_authorize_mode(self, args: dict) -> dict:
        principal = self.principal(args["netid"])
        modes = self.policy.authorize_mode(principal, args["project"])
        return {"modes": sorted(m.value for m in modes)}

    def _op_set_proxy_whitelist(self, args: dict) -> dict:
        project = self.policy.set_proxy_whitelist(args["actor"], args["project"],
                                                  args["origins"])
        return {"project": project.id, "origins": sorted(project.proxy_whitelist)}

    def _op_set_brokers(self, args: dict) -> dict:
        project = self.policy.set_brokers(args["actor"], args["project"], args["netids"])
        return {"project": project.id, "brokers": sorted(project.brokers)}

    def _op_provision_vm(self, args: dict) -> dict:
        vm = self.enclave.provision_vm(args["project"], args["zone"],
                                       int(args["cpu"]), int(args["ram"]),
                                       bool(args.get("dedicated", False)))
        return vm.to_wire()

    def _op_resize_vm(self, args: dict) -> dict:
        return self.enclave.resize_vm(args["vm"], int(args["cpu"]), int(args["ram"])).to_wire()

    def _op_destroy_vm(self, args: dict) -> dict:
        return self.enclave.destroy_vm(args["vm"])

    def _op_read_disk(self, args: dict) -> dict:
        return {"vm": args["vm"], "disk": self.enclave.read_disk(args["vm"])}

    def _op_write_disk(self, args: dict) -> dict:
        return {"vm": args["vm"], "disk": self.enclave.write_disk(args["vm"], args["token"])}

    def _op_create_share(self, args: dict) -> dict:
        share = self.enclave.create_share(
            args["project"], args["protocol"], float(args["capacity_tb"]),
            bool(args.get("dedicated_device", False)),
            bool(args.get("encrypted_at_rest", False)))
        return share.to_wire()

    def _op_set_share_acl(self, args: dict) -> dict:
        return self.enclave.set_share_acl(args["actor"], args["share"],
                                          args.get("groups", [])).to_wire()

    def _op_is_reachable(self, args: dict) -> dict:
        src = args["src"]
        if args.get("session"):
            session = self.sessions.session(args["session"])
            src = AccessContext(
                src_zone=args.get("src", INTERNET),
                mode=session.mode,
                project_id=session.project_id,
                authorized_modes=frozenset({session.mode}),
                session_id=session.id,
            )
        return self.check_reachable(src, args["dst"], args["service"]).to_wire()

    def _op_register_exception(self, args: dict) -> dict:
        rule_id = self.enclave.register_exception(
            args["actor"], service=args["service"], src=args["src"], dst=args["dst"],
            direction=args.get("direction", "inbound"),
            documented_by=args.get("documented_by", ""),
            rule_id=args.get("id"))
        return {"rule": rule_id}

    def _op_proxy_fetch(self, args: dict) -> dict:
        return self.enclave.proxy_fetch(args["project"], args["url"]).to_wire()

    def _op_open_session(self, args: dict) -> dict:
        principal = self.principal(args["netid"])
        session, view = self.sessions.open_session(
            principal, args["project"], args["mode"],
            bool(args.get("endpoint_managed", False)),
            src_zone=args.get("src_zone", INTERNET))
        return view.to_wire()

    def _op_resume_session(self, args: dict) -> dict:
        principal = self.principal(args["netid"])
        session, view = self.sessions.resume_session(
            principal, args["project"], args["mode"],
            bool(args.get("endpoint_managed", False)),
            src_zone=args.get("src_zone", INTERNET))
        return view.to_wire()

    def _op_close_session(self, args: dict) -> dict:
        session = self.sessions.close_session(args["session"])
        return {"session_id": session.id, "state": session.state.value,
                "closed_at": session.closed_at}

    def _op_mint_credential(self, args: dict) -> dict:
        credential = self.sessions.mint_credential(args["arbitrary_user"], args["session"])
        return {"credential": credential.id, "state": credential.state.value}

    def _op_align_groups(self, args: dict) -> dict:
        return {"aligned": self.sessions.align_groups(args["session"])}

    def _op_authenticate_to_vm(self, args: dict) -> dict:
        outcome = self.sessions.authenticate_to_vm(args["secret"], args["vm"])
        return {"outcome": outcome.value}

    def _op_expire_retained(self, args: dict) -> dict:
        return {"reclaimed": self.sessions.expire_retained()}

    def _op_attempt_clipboard(self, args: dict) -> dict:
        return self.egress.attempt_clipboard(args["session"],
                                             args.get("direction", "out")).to_wire()

    def _op_attempt_file_egress(self, args: dict) -> dict:
        return self.egress.attempt_file_egress(args["session"],
                                               args.get("object", "file")).to_wire()

    def _op_submit_export(self, args: dict) -> dict:
        return self.egress.submit_export(args["session"], args["payload"]).to_wire()

    def _op_adjudicate_export(self, args: dict) -> dict:
        return self.egress.adjudicate_export(args["broker"], args["request"],
                                             args["verdict"], args["rationale"]).to_wire()

    def _op_submit_image(self, args: dict) -> dict:
        return self.pipeline.submit_image(args["builder"], args["project"],
                                          args["payload"],
                                          args.get("source", "campus")).to_wire()

    def _op_vet_image(self, args: dict) -> dict:
        return self.pipeline.vet_image(args["vetter"], args["image"],
                                       args.get("report", "")).to_wire()

    def _op_approve_image(self, args: dict) -> dict:
        return self.pipeline.approve_image(args["approver"], args["image"]).to_wire()

    def _op_deploy_image(self, args: dict) -> dict:
        return self.pipeline.deploy_image(args["operator"], args["image"],
                                          args["project"], args["digest"],
                                          args.get("vm")).to_wire()

    def _op_update_deployment(self, args: dict) -> dict:
        return self.pipeline.update_deployment(args["operator"], args["instance"],
                                               args["image"]).to_wire()

    def _op_revoke_image(self, args: dict) -> dict:
        return self.pipeline.revoke_image(args["actor"], args["image"]).to_wire()

    def _op_resolve_identity(self, args: dict) -> dict:
        netid = self.ledger.resolve_identity(args["arbitrary_user"],
                                             int(args.get("at", self.clock.now)))
        return {"arbitrary_user": args["arbitrary_user"], "netid": netid}

    def _op_reconstruct_session(self, args: dict) -> dict:
        events = self.ledger.reconstruct_session(args["session"])
        return {"session": args["session"],
                "events": [{"seq": e.seq, "at": e.at, "actor": e.actor,
                            "action": e.action, "object": e.object,
                            "detail": dict(e.detail)} for e in events]}

    def _op_verify_chain(self, args: dict) -> dict:
        ok, bad = self.ledger.verify_chain()
        return {"ok": ok, "first_bad_seq": bad}

    def _op_compliance_report(self, args: dict) -> dict:
        report = self.ledger.compliance_report(
            args["project"], int(args.get("start", 0)),
            int(args.get("end", self.clock.now)))
        return report.to_wire()

    def _op_export_ledger(self, args: dict) -> dict:
        return {"events": len(self.ledger), "lines": self.ledger.export_lines()}
