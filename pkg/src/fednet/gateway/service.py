"""Stateful gateway: the only admission path into a domain.

Every attach passes through ``handle_attach``; the 5G core cannot
activate a session on its own.  The gateway evaluates policy, admits or
rejects, issues signed tokens, exchanges federation assertions with peer
gateways, and derives per-session route programs from the effective
grant set.  Roams are make-before-break: the old session is released
only after the new one is active.
"""

from __future__ import annotations

import itertools
from dataclasses import replace

from ..core5g import Core5G, NoActiveSession, UnknownImsi, UnknownSession
from ..errors import SimError
from ..kernel import Kernel, SimEvent
from ..pep import AclRule, RouteEntry
from .policy import (
    INTERNET_RESOURCE,
    AccessRequest,
    AuthzDecision,
    RequesterContext,
    ServiceEndpoint,
    UnknownService,
    evaluate_access,
    permitted_pairs,
)
from .wire import (
    AccessToken,
    ContinuityToken,
    FederationAssertion,
    assertion_mac,
    token_mac,
    verify_assertion,
    verify_token,
)


class NoFederationPeer(SimError):
    """Federation requested toward a domain with no key or peer gateway."""


def derive_route_program(
    session_ip: str,
    permitted: frozenset[tuple[str, str]],
    catalog: dict[str, ServiceEndpoint],
) -> tuple[list[RouteEntry], list[AclRule]]:
    """Translate one session's grant set into routes and ACLs.

    Only ``access`` and ``internet`` grants shape the data path; manage
    grants are a control-plane right and produce no flow rules.  When
    internet is granted, every unpermitted catalog service gets an
    explicit deny ahead of the internet catch-all so broad egress never
    reopens a lateral path.  The final rule is always a deny-all for the
    session source; a session with no grants compiles to exactly that
    one rule and no routes.
    """
    src = f"{session_ip}/32"
    granted_services = sorted(resource for action, resource in permitted if action == "access")
    for name in granted_services:
        if name not in catalog:
            raise UnknownService(f"no catalog entry for service {name!r}")
    has_internet = ("internet", INTERNET_RESOURCE) in permitted

    routes: list[RouteEntry] = []
    acls: list[AclRule] = []
    priorities = itertools.count(10, 10)
    for name in granted_services:
        svc = catalog[name]
        routes.append(RouteEntry(prefix=f"{svc.ip}/32", next_hop=f"svc:{name}"))
        acls.append(
            AclRule(
                priority=next(priorities),
                src=src,
                dst=f"{svc.ip}/32",
                dst_port=svc.port,
                proto="*",
                action="permit",
            )
        )
    if has_internet:
        for name in sorted(catalog):
            if name in granted_services:
                continue
            acls.append(
                AclRule(
                    priority=next(priorities),
                    src=src,
                    dst=f"{catalog[name].ip}/32",
                    dst_port="*",
                    proto="*",
                    action="deny",
                )
            )
        routes.append(RouteEntry(prefix="0.0.0.0/0", next_hop="red-side"))
        acls.append(
            AclRule(
                priority=next(priorities),
                src=src,
                dst="0.0.0.0/0",
                dst_port="*",
                proto="*",
                action="permit",
            )
        )
    acls.append(
        AclRule(
            priority=next(priorities),
            src=src,
            dst="0.0.0.0/0",
            dst_port="*",
            proto="*",
            action="deny",
        )
    )
    return routes, acls


class Gateway:
    """Per-domain admission and federation endpoint."""

    def __init__(
        self,
        kernel: Kernel,
        domain: str,
        core: Core5G,
        key: bytes,
        federation_key: bytes | None = None,
        token_ttl_ms: int = 3_600_000,
        assertion_ttl_ms: int = 600_000,
        controller_id: str | None = None,
    ):
        self.kernel = kernel
        self.domain = domain
        self.core = core
        self.key = key
        self.federation_key = federation_key
        self.token_ttl_ms = token_ttl_ms
        self.assertion_ttl_ms = assertion_ttl_ms
        self.controller_id = controller_id
        self._component = f"gateway.{domain}"

        self.rules = []
        self.role_slice_map: dict[str, str] = {}
        self.catalog: dict[str, ServiceEndpoint] = {}
        self.policy_version = 0

        self.peers: dict[str, "Gateway"] = {}
        self._grants: dict[int, frozenset[tuple[str, str]]] = {}
        self._session_mode: dict[int, str] = {}
        self._assertions: dict[str, FederationAssertion] = {}
        self._continuity: dict[str, ContinuityToken] = {}
        self._pending_roam: dict[str, dict] = {}
        self._onboarding: dict[int, dict] = {}
        self._tokens: dict[str, AccessToken] = {}
        self._token_seq = itertools.count(1)

        kernel.register(self._component, self._on_event)

    def set_peer(self, domain: str, gateway: "Gateway") -> None:
        self.peers[domain] = gateway

    def apply_policy(
        self,
        rules,
        role_slice_map: dict[str, str],
        catalog: dict[str, ServiceEndpoint],
        version: int,
    ) -> None:
        """Install the canonical rule set pushed by the federation controller.

        Grants of live sessions are re-derived under the new rules, so a
        policy change reshapes existing sessions' route programs, not
        just future admissions.  Federated sessions re-intersect their
        cached assertion with the new local evaluation and can only
        shrink relative to what was asserted.
        """
        self.rules = list(rules)
        self.role_slice_map = dict(role_slice_map)
        self.catalog = dict(catalog)
        self.policy_version = version
        for session in self.core.live_sessions():
            if session.state != "active":
                continue
            if self._session_mode.get(session.session_id) == "federated":
                assertion = self._assertions.get(session.imsi)
                if assertion is None:
                    self._grants[session.session_id] = frozenset()
                    continue
                decision = self.federate_in(assertion, via_vpn=session.vpn_tunnel)
                self._grants[session.session_id] = decision.permitted or frozenset()
            else:
                ctx = self.core.query_subscriber_context(session.imsi)
                self._grants[session.session_id] = permitted_pairs(
                    ctx, self.rules, self.catalog,
                    via_federation=False, via_vpn=session.vpn_tunnel,
                )

    # -- attach admission ---------------------------------------------------

    def handle_attach(self, payload: dict) -> AuthzDecision:
        session_id = payload["session_id"]
        imsi = payload["imsi"]
        request = AccessRequest(
            imsi=imsi,
            domain=self.domain,
            requested_action="attach",
            resource="*",
            session_id=session_id,
            via_federation=payload.get("via_federation", False),
            via_vpn=payload.get("via_vpn", False),
        )
        if request.via_federation:
            decision, roles = self._evaluate_federated(request)
        else:
            decision, roles = self._evaluate_home(request)
        self.kernel.log(
            self._component,
            "authz_decision",
            session_id=session_id,
            imsi=imsi,
            action="attach",
            effect=decision.effect,
            rule=decision.matched_rule,
            via_federation=request.via_federation,
            reason=decision.reason or "",
        )
        if decision.effect == "permit":
            self._admit(request, decision, roles)
        elif decision.effect == "manual":
            self._hold_for_onboarding(request, decision)
        else:
            self._reject(request, decision)
        return decision

    def _evaluate_home(self, request: AccessRequest) -> tuple[AuthzDecision, frozenset[str]]:
        try:
            ctx = self.core.query_subscriber_context(request.imsi)
        except UnknownImsi:
            return AuthzDecision("deny", "default", reason="unknown_imsi"), frozenset()
        if not ctx.subscription_active:
            return AuthzDecision("deny", "default", reason="subscription_inactive"), ctx.roles
        decision = evaluate_access(request, ctx, self.rules, self.role_slice_map)
        if decision.effect == "permit":
            pairs = permitted_pairs(
                ctx, self.rules, self.catalog, via_federation=False, via_vpn=request.via_vpn
            )
            decision = replace(decision, permitted=pairs)
        return decision, ctx.roles

    def _evaluate_federated(self, request: AccessRequest) -> tuple[AuthzDecision, frozenset[str]]:
        assertion = self._assertions.get(request.imsi)
        if assertion is None:
            return AuthzDecision("deny", "federation", reason="no_assertion"), frozenset()
        return self.federate_in(assertion, via_vpn=request.via_vpn), assertion.roles

    def _admit(self, request: AccessRequest, decision: AuthzDecision, roles: frozenset[str]) -> None:
        slice_id = decision.slice_id or self._default_slice()
        session = self.core.admit_session(request.session_id, slice_id)
        grants = decision.permitted or frozenset()
        self._grants[session.session_id] = grants
        self._session_mode[session.session_id] = (
            "federated" if request.via_federation else "local"
        )
        continuity = self._continuity.get(request.imsi)
        if continuity is None:
            # Minted once per subscriber from the seeded stream; survives roams.
            continuity = ContinuityToken(
                service_session_id=self.kernel.rng_next("continuity"),
                issued_in=self.domain,
            )
            self._continuity[request.imsi] = continuity
        token = self.issue_token(request.imsi, roles, grants)
        self.kernel.log(
            self._component,
            "token_issued",
            imsi=request.imsi,
            session_id=session.session_id,
            token_id=token.token_id,
            service_session_id=continuity.service_session_id,
            expires_at=token.expires_at,
        )
        routes, acls = derive_route_program(session.ip, grants, self.catalog)
        self.kernel.log(
            self._component,
            "route_program",
            session_id=session.session_id,
            imsi=request.imsi,
            routes=len(routes),
            acls=len(acls),
        )
        self.notify_session_changed()
        pending = self._pending_roam.pop(request.imsi, None)
        if pending is not None:
            self.kernel.after(
                0,
                f"gateway.{pending['home_domain']}",
                "roam_complete",
                {
                    "imsi": request.imsi,
                    "to_domain": self.domain,
                    "old_session_id": pending["old_session_id"],
                },
            )

    def _reject(self, request: AccessRequest, decision: AuthzDecision) -> None:
        self.core.reject_session(
            request.session_id, reason=decision.reason or decision.matched_rule
        )
        pending = self._pending_roam.pop(request.imsi, None)
        if pending is not None:
            # Make-before-break: the home session is still active, nothing to undo.
            self.kernel.log(
                self._component,
                "roam_failed",
                imsi=request.imsi,
                to_domain=self.domain,
                reason=decision.reason or decision.matched_rule,
            )

    def _hold_for_onboarding(self, request: AccessRequest, decision: AuthzDecision) -> None:
        item = {
            "session_id": request.session_id,
            "imsi": request.imsi,
            "domain": self.domain,
            "rule": decision.matched_rule,
            "requested_at": self.kernel.clock,
            "via_federation": request.via_federation,
            "via_vpn": request.via_vpn,
        }
        self._onboarding[request.session_id] = item
        self.kernel.log(
            self._component,
            "onboarding_held",
            session_id=request.session_id,
            imsi=request.imsi,
            rule=decision.matched_rule,
        )
        if self.controller_id is not None:
            self.kernel.after(0, self.controller_id, "onboarding_pending", dict(item))

    def _apply_onboarding_decision(self, payload: dict) -> None:
        session_id = payload["session_id"]
        actor = payload.get("actor", "operator")
        item = self._onboarding.pop(session_id, None)
        if item is None:
            raise UnknownSession(f"no onboarding item for session {session_id}")
        imsi = item["imsi"]
        request = AccessRequest(
            imsi=imsi,
            domain=self.domain,
            requested_action="attach",
            resource="*",
            session_id=session_id,
            via_federation=item["via_federation"],
            via_vpn=item["via_vpn"],
        )
        if payload["approve"]:
            decision, roles = self._operator_grant(request, actor)
        else:
            decision = AuthzDecision(
                "deny", f"manual:{actor}", reason="operator_denied"
            )
            roles = frozenset()
        self.kernel.log(
            self._component,
            "authz_decision",
            session_id=session_id,
            imsi=imsi,
            action="attach",
            effect=decision.effect,
            rule=decision.matched_rule,
            via_federation=request.via_federation,
            reason=decision.reason or "",
        )
        if decision.effect == "permit":
            self._admit(request, decision, roles)
        else:
            self._reject(request, decision)

    def _operator_grant(self, request: AccessRequest, actor: str) -> tuple[AuthzDecision, frozenset[str]]:
        """Operator approval grants attach; service grants still come from policy."""
        if request.via_federation:
            assertion = self._assertions.get(request.imsi)
            if assertion is None:
                return AuthzDecision("deny", f"manual:{actor}", reason="no_assertion"), frozenset()
            inner = self.federate_in(assertion, via_vpn=request.via_vpn)
            pairs = inner.permitted or frozenset()
            roles = assertion.roles
        else:
            ctx = self.core.query_subscriber_context(request.imsi)
            pairs = permitted_pairs(
                ctx, self.rules, self.catalog, via_federation=False, via_vpn=request.via_vpn
            )
            roles = ctx.roles
        slice_id = None
        for role in sorted(roles):
            if role in self.role_slice_map:
                slice_id = self.role_slice_map[role]
                break
        decision = AuthzDecision(
            "permit",
            f"manual:{actor}",
            slice_id=slice_id,
            obligations=(f"route-program/{request.imsi}",),
            permitted=pairs,
        )
        return decision, roles

    def _default_slice(self) -> str:
        return min(self.core.slice_catalog)

    # -- tokens ---------------------------------------------------------------

    def issue_token(
        self,
        imsi: str,
        roles: frozenset[str],
        permitted: frozenset[tuple[str, str]],
    ) -> AccessToken:
        now = self.kernel.clock
        token = AccessToken(
            token_id=f"{self.domain}-tok-{next(self._token_seq)}",
            imsi=imsi,
            domain=self.domain,
            roles=roles,
            permitted=permitted,
            issued_at=now,
            expires_at=now + self.token_ttl_ms,
        )
        token = replace(token, mac=token_mac(token, self.key))
        self._tokens[imsi] = token
        return token

    def verify_token(self, token: AccessToken) -> bool:
        return verify_token(token, self.key, self.kernel.clock)

    def token_for(self, imsi: str) -> AccessToken | None:
        return self._tokens.get(imsi)

    # -- federation -----------------------------------------------------------

    def federate_out(self, imsi: str, to_domain: str) -> FederationAssertion:
        """Assert the subscriber's home-granted rights toward a peer domain."""
        if self.federation_key is None:
            raise NoFederationPeer(f"{self.domain} has no federation key")
        if to_domain not in self.peers:
            raise NoFederationPeer(f"{self.domain} has no peer gateway for {to_domain}")
        session = self.core.active_session(imsi)
        if session is None:
            raise NoActiveSession(f"imsi {imsi} has no active session in {self.domain}")
        ctx = self.core.query_subscriber_context(imsi)
        pairs = permitted_pairs(
            ctx, self.rules, self.catalog, via_federation=False, via_vpn=session.vpn_tunnel
        )
        continuity = self._continuity.get(imsi)
        if continuity is None:
            continuity = ContinuityToken(
                service_session_id=self.kernel.rng_next("continuity"),
                issued_in=self.domain,
            )
            self._continuity[imsi] = continuity
        assertion = FederationAssertion(
            imsi=imsi,
            home_domain=self.domain,
            roles=ctx.roles,
            posture=ctx.posture,
            permitted=pairs,
            continuity=continuity,
            expires_at=self.kernel.clock + self.assertion_ttl_ms,
        )
        return replace(assertion, mac=assertion_mac(assertion, self.federation_key))

    def federate_in(self, assertion: FederationAssertion, via_vpn: bool = False) -> AuthzDecision:
        """Admit-or-deny for a visiting subscriber, never wider than asserted."""
        if self.federation_key is None:
            return AuthzDecision("deny", "federation", reason="no_federation_key")
        now = self.kernel.clock
        if assertion.mac != assertion_mac(assertion, self.federation_key):
            return AuthzDecision("deny", "federation", reason="bad_mac")
        if not verify_assertion(assertion, self.federation_key, now):
            return AuthzDecision("deny", "federation", reason="assertion_expired")
        ctx = RequesterContext(
            imsi=assertion.imsi,
            roles=assertion.roles,
            device_type="unknown",
            posture=assertion.posture,
            home_domain=assertion.home_domain,
        )
        visited = permitted_pairs(
            ctx, self.rules, self.catalog, via_federation=True, via_vpn=via_vpn
        )
        effective = assertion.permitted & visited
        if not effective:
            return AuthzDecision("deny", "federation", reason="no_effective_grants")
        slice_id = None
        for role in sorted(assertion.roles):
            if role in self.role_slice_map:
                slice_id = self.role_slice_map[role]
                break
        return AuthzDecision(
            "permit",
            "federation",
            slice_id=slice_id,
            obligations=(f"route-program/{assertion.imsi}",),
            permitted=effective,
        )

    # -- roam orchestration -----------------------------------------------------

    def _start_roam(self, payload: dict) -> None:
        imsi = payload["imsi"]
        to_domain = payload["to_domain"]
        try:
            assertion = self.federate_out(imsi, to_domain)
        except SimError as exc:
            self.kernel.log(
                self._component,
                "roam_failed",
                imsi=imsi,
                to_domain=to_domain,
                reason=type(exc).__name__,
            )
            return
        self.kernel.log(
            self._component,
            "federation_out",
            imsi=imsi,
            to_domain=to_domain,
            service_session_id=assertion.continuity.service_session_id,
            expires_at=assertion.expires_at,
        )
        self.kernel.after(
            0,
            f"gateway.{to_domain}",
            "assertion_push",
            {
                "assertion": assertion,
                "roam": {
                    "home_domain": self.domain,
                    "old_session_id": payload["old_session_id"],
                },
            },
        )

    def _receive_assertion(self, payload: dict) -> None:
        assertion: FederationAssertion = payload["assertion"]
        self._assertions[assertion.imsi] = assertion
        self._continuity[assertion.imsi] = assertion.continuity
        self.kernel.log(
            self._component,
            "federation_in",
            imsi=assertion.imsi,
            home_domain=assertion.home_domain,
            service_session_id=assertion.continuity.service_session_id,
            expires_at=assertion.expires_at,
        )
        roam = payload.get("roam")
        if roam is not None:
            self._pending_roam[assertion.imsi] = roam
            self.kernel.after(
                0,
                f"core5g.{self.domain}",
                "attach_cmd",
                {"imsi": assertion.imsi, "via_federation": True},
            )

    def _finish_roam(self, payload: dict) -> None:
        self.core.complete_roam(
            payload["imsi"], payload["to_domain"], payload["old_session_id"]
        )
        self.notify_session_changed()

    # -- controller support -------------------------------------------------------

    def notify_session_changed(self) -> None:
        if self.controller_id is not None:
            self.kernel.after(0, self.controller_id, "session_changed", {"domain": self.domain})

    def grants_for(self, session_id: int) -> frozenset[tuple[str, str]]:
        return self._grants.get(session_id, frozenset())

    def session_view_entries(self) -> list[dict]:
        """Rows for the controller's session view, stable order."""
        entries = []
        for session in self.core.live_sessions():
            continuity = self._continuity.get(session.imsi)
            entries.append(
                {
                    "session_id": session.session_id,
                    "imsi": session.imsi,
                    "domain": self.domain,
                    "ip": session.ip,
                    "slice_id": session.slice_id,
                    "state": session.state,
                    "service_session_id": continuity.service_session_id if continuity else None,
                    "permitted": self._grants.get(session.session_id, frozenset()),
                    "vpn": session.vpn_tunnel,
                }
            )
        return entries

    def onboarding_items(self) -> list[dict]:
        return [dict(self._onboarding[k]) for k in sorted(self._onboarding)]

    # -- event dispatch -------------------------------------------------------------

    def _on_event(self, ev: SimEvent) -> None:
        if ev.kind == "access_request":
            self.handle_attach(ev.payload)
        elif ev.kind == "roam_request":
            self._start_roam(ev.payload)
        elif ev.kind == "assertion_push":
            self._receive_assertion(ev.payload)
        elif ev.kind == "roam_complete":
            self._finish_roam(ev.payload)
        elif ev.kind == "onboarding_decision":
            self._apply_onboarding_decision(ev.payload)
        else:
            raise ValueError(f"unexpected event kind for gateway: {ev.kind}")
