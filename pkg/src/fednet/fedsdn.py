"""Federation SDN controller.

Holds the single canonical policy set for every federated domain,
aggregates a cross-domain session view, compiles per-domain enforcement
programs, and pushes them to the policy-enforcement routers.  Pushes are
acknowledged; an unacknowledged push is retried on a fixed backoff until
a retry budget is exhausted, at which point a sync alarm is raised and
the periodic reconcile loop becomes the recovery path.

Policy versions are monotonic.  A failed mutation leaves the version
untouched.  Compilation is a pure function of (session view, policy
set), so reconciling a converged domain is a no-op.
"""

from __future__ import annotations

import ipaddress
import itertools
from dataclasses import dataclass, field, replace

from .core5g import AlreadyAttached, NoActiveSession
from .errors import SimError
from .gateway.policy import AuthorizationPolicy, MalformedPolicy, ServiceEndpoint, validate_rules
from .gateway.service import Gateway, derive_route_program
from .kernel import Kernel, SimEvent
from .pep import AclRule, PepRouter, RouteEntry


class DomainUnreachable(SimError):
    """A named domain is not registered with the controller."""


class UnknownOnboarding(SimError):
    """No onboarding item is queued under the given session id."""


@dataclass(frozen=True)
class SessionEntry:
    session_id: int
    imsi: str
    domain: str
    ip: str | None
    slice_id: str | None
    state: str
    service_session_id: int | None
    permitted: frozenset[tuple[str, str]]
    vpn: bool


@dataclass(frozen=True)
class SessionView:
    entries: tuple[SessionEntry, ...]
    as_of: int
    unreachable: tuple[str, ...] = ()


@dataclass(frozen=True)
class CanonicalPolicySet:
    version: int
    raw_rules: tuple[dict, ...]
    rules: tuple[AuthorizationPolicy, ...]
    role_slice_map: dict[str, str] = field(default_factory=dict)
    catalog: dict[str, ServiceEndpoint] = field(default_factory=dict)


@dataclass(frozen=True)
class EnforcementProgram:
    routes: tuple[RouteEntry, ...]
    acls: tuple[AclRule, ...]

    def render(self) -> str:
        """Byte-stable text form, used for convergence comparison."""
        lines = [f"route {r.prefix} -> {r.next_hop}" for r in self.routes]
        lines += [
            f"acl {a.priority} {a.action} {a.src} -> {a.dst} port {a.dst_port} proto {a.proto}"
            for a in self.acls
        ]
        return "\n".join(lines) + ("\n" if lines else "")


def _route_sort_key(entry: RouteEntry) -> tuple[int, int]:
    net = ipaddress.ip_network(entry.prefix)
    return (-net.prefixlen, int(net.network_address))


def compile_program(
    domain: str, view: SessionView, policyset: CanonicalPolicySet
) -> EnforcementProgram:
    """Compile one domain's full program from the session view.

    Static host routes for every catalog service are always present.
    Each active session contributes its derived route program; session
    ACL blocks are rebased onto disjoint priority ranges in session IP
    order.  An empty view compiles to the static routes alone, which
    under the router's default deny blocks every flow.
    """
    routes: dict[tuple[str, str], RouteEntry] = {}
    for name in sorted(policyset.catalog):
        entry = RouteEntry(prefix=f"{policyset.catalog[name].ip}/32", next_hop=f"svc:{name}")
        routes[(entry.prefix, entry.next_hop)] = entry
    acls: list[AclRule] = []
    sessions = sorted(
        (e for e in view.entries if e.domain == domain and e.state == "active"),
        key=lambda e: tuple(int(p) for p in (e.ip or "0.0.0.0").split(".")),
    )
    for idx, session in enumerate(sessions):
        session_routes, session_acls = derive_route_program(
            session.ip, session.permitted, policyset.catalog
        )
        for entry in session_routes:
            routes.setdefault((entry.prefix, entry.next_hop), entry)
        base = 1000 + idx * 100
        for offset, rule in enumerate(session_acls):
            acls.append(replace(rule, priority=base + offset))
    ordered_routes = tuple(sorted(routes.values(), key=_route_sort_key))
    return EnforcementProgram(routes=ordered_routes, acls=tuple(acls))


@dataclass
class _DomainLink:
    gateway: Gateway
    pep: PepRouter
    applied_version: int = 0
    acked_render: str | None = None
    pending: dict | None = None


class Controller:
    """The federation controller component, registered as "fed-sdn"."""

    def __init__(
        self,
        kernel: Kernel,
        retry_ms: int = 500,
        max_retries: int = 10,
        reconcile_interval_ms: int = 1000,
    ):
        self.kernel = kernel
        self.retry_ms = retry_ms
        self.max_retries = max_retries
        self.reconcile_interval_ms = reconcile_interval_ms
        self._component = "fed-sdn"
        self.domains: dict[str, _DomainLink] = {}
        self.policyset = CanonicalPolicySet(version=0, raw_rules=(), rules=())
        self.onboarding: dict[int, dict] = {}
        self.audit: list[dict] = []
        self._push_seq = itertools.count(1)
        self._drop_plan: dict[str, int] = {}
        self._unreachable_until: dict[str, int] = {}
        self._reconcile_horizon: int | None = None
        kernel.register(self._component, self._on_event)

    # -- wiring ---------------------------------------------------------------

    def register_domain(self, name: str, gateway: Gateway, pep: PepRouter) -> None:
        self.domains[name] = _DomainLink(gateway=gateway, pep=pep)

    def set_static_config(
        self, role_slice_map: dict[str, str], catalog: dict[str, ServiceEndpoint]
    ) -> None:
        self.policyset = replace(
            self.policyset, role_slice_map=dict(role_slice_map), catalog=dict(catalog)
        )

    def start_reconcile(self, horizon_ms: int | None) -> None:
        """Arm the periodic reconcile loop up to (and including) the horizon."""
        self._reconcile_horizon = horizon_ms
        self._schedule_next_reconcile()

    def _schedule_next_reconcile(self) -> None:
        next_at = self.kernel.clock + self.reconcile_interval_ms
        if self._reconcile_horizon is None or next_at <= self._reconcile_horizon:
            self.kernel.schedule(next_at, self._component, "reconcile_tick", {})

    # -- policy mutations -------------------------------------------------------

    def update_policies(self, mutation: dict, actor: str) -> int:
        """Apply one mutation; returns the new version.

        Raises MalformedPolicy without touching state when the resulting
        rule set does not validate.
        """
        op = mutation.get("op")
        current = [dict(r) for r in self.policyset.raw_rules]
        if op == "replace":
            raw = mutation.get("rules")
            if not isinstance(raw, list):
                raise MalformedPolicy("replace mutation needs a 'rules' list")
        elif op == "add_rule":
            rule = mutation.get("rule")
            if not isinstance(rule, dict):
                raise MalformedPolicy("add_rule mutation needs a 'rule' object")
            raw = current + [rule]
        elif op == "remove_rule":
            rule_id = mutation.get("rule_id")
            if rule_id not in {r.get("rule_id") for r in current}:
                raise MalformedPolicy(f"unknown rule_id {rule_id!r}")
            raw = [r for r in current if r.get("rule_id") != rule_id]
        else:
            raise MalformedPolicy(f"unknown mutation op {op!r}")
        rules = validate_rules(raw)
        version = self.policyset.version + 1
        self.policyset = replace(
            self.policyset,
            version=version,
            raw_rules=tuple(dict(r) for r in raw),
            rules=tuple(rules),
        )
        self.audit.append(
            {"version": version, "actor": actor, "op": op, "at": self.kernel.clock}
        )
        self.kernel.log(
            self._component,
            "policy_updated",
            version=version,
            actor=actor,
            op=op,
            rules=len(rules),
        )
        self.push_all()
        return version

    # -- session view -------------------------------------------------------------

    def poll_sessions(self) -> SessionView:
        now = self.kernel.clock
        entries: list[SessionEntry] = []
        unreachable: list[str] = []
        for name in sorted(self.domains):
            if self._unreachable_until.get(name, -1) > now:
                unreachable.append(name)
                continue
            for row in self.domains[name].gateway.session_view_entries():
                entries.append(SessionEntry(**row))
        return SessionView(entries=tuple(entries), as_of=now, unreachable=tuple(unreachable))

    def compile_enforcement(self, view: SessionView | None = None) -> dict[str, EnforcementProgram]:
        if view is None:
            view = self.poll_sessions()
        return {
            name: compile_program(name, view, self.policyset) for name in sorted(self.domains)
        }

    # -- push and retry ---------------------------------------------------------------

    def push_all(self) -> None:
        for name in sorted(self.domains):
            self.push_program(name)

    def push_program(self, domain: str, retries: int = 0) -> int:
        """Schedule one push attempt toward a domain; returns the attempt id."""
        link = self.domains.get(domain)
        if link is None:
            raise DomainUnreachable(f"domain {domain!r} is not registered")
        attempt = next(self._push_seq)
        link.pending = {
            "attempt": attempt,
            "version": self.policyset.version,
            "retries": retries,
        }
        self.kernel.log(
            self._component,
            "push_scheduled",
            domain=domain,
            version=self.policyset.version,
            attempt=attempt,
        )
        self.kernel.after(0, self._component, "push_deliver", {"domain": domain, "attempt": attempt})
        self.kernel.after(
            self.retry_ms, self._component, "push_check", {"domain": domain, "attempt": attempt}
        )
        return attempt

    def _deliver_push(self, payload: dict) -> None:
        domain = payload["domain"]
        link = self.domains[domain]
        if link.pending is None or link.pending["attempt"] != payload["attempt"]:
            return
        version = link.pending["version"]
        if self._drop_plan.get(domain, 0) > 0:
            self._drop_plan[domain] -= 1
            self.kernel.log(
                self._component,
                "push_dropped",
                domain=domain,
                version=version,
                attempt=payload["attempt"],
            )
            return
        if self._unreachable_until.get(domain, -1) > self.kernel.clock:
            self.kernel.log(
                self._component,
                "push_dropped",
                domain=domain,
                version=version,
                attempt=payload["attempt"],
            )
            return
        # Policy lands on the gateway first so session grants are re-derived
        # before the enforcement program is compiled from them.
        link.gateway.apply_policy(
            self.policyset.rules,
            self.policyset.role_slice_map,
            self.policyset.catalog,
            self.policyset.version,
        )
        program = compile_program(domain, self.poll_sessions(), self.policyset)
        link.pep.apply_program(list(program.routes), list(program.acls), self.policyset.version)
        link.applied_version = self.policyset.version
        link.acked_render = program.render()
        link.pending = None
        self.kernel.log(
            self._component,
            "push_acked",
            domain=domain,
            version=self.policyset.version,
            attempt=payload["attempt"],
        )

    def _check_push(self, payload: dict) -> None:
        domain = payload["domain"]
        link = self.domains[domain]
        if link.pending is None or link.pending["attempt"] != payload["attempt"]:
            return
        retries = link.pending["retries"] + 1
        if retries > self.max_retries:
            link.pending = None
            self.kernel.log(
                self._component,
                "sync_alarm",
                domain=domain,
                version=self.policyset.version,
                retries=self.max_retries,
            )
            return
        self.kernel.log(
            self._component,
            "push_retry",
            domain=domain,
            attempt=payload["attempt"],
            retry=retries,
        )
        self.push_program(domain, retries=retries)

    # -- reconciliation ------------------------------------------------------------------

    def reconcile(self) -> list[tuple[str, str]]:
        """Compare desired vs acknowledged state per domain; push where they differ."""
        actions: list[tuple[str, str]] = []
        view = self.poll_sessions()
        pushes = 0
        for name in sorted(self.domains):
            link = self.domains[name]
            if link.pending is not None:
                actions.append((name, "pending"))
                continue
            desired = compile_program(name, view, self.policyset)
            if (
                link.applied_version != self.policyset.version
                or link.acked_render != desired.render()
            ):
                actions.append((name, "push"))
                pushes += 1
                self.push_program(name)
            else:
                actions.append((name, "noop"))
        self.kernel.log(self._component, "reconcile_run", pushes=pushes, domains=len(actions))
        return actions

    # -- fault injection -----------------------------------------------------------------

    def drop_next_pushes(self, domain: str, count: int) -> None:
        self._drop_plan[domain] = self._drop_plan.get(domain, 0) + count

    def set_unreachable(self, domain: str, until_ms: int) -> None:
        self._unreachable_until[domain] = until_ms

    # -- onboarding queue ----------------------------------------------------------------

    def list_onboarding(self) -> list[dict]:
        return [dict(self.onboarding[k]) for k in sorted(self.onboarding)]

    def approve_onboarding(self, session_id: int, actor: str) -> None:
        self._resolve_onboarding(session_id, actor, approve=True)

    def deny_onboarding(self, session_id: int, actor: str) -> None:
        self._resolve_onboarding(session_id, actor, approve=False)

    def _resolve_onboarding(self, session_id: int, actor: str, approve: bool) -> None:
        item = self.onboarding.pop(session_id, None)
        if item is None:
            raise UnknownOnboarding(f"no onboarding item for session {session_id}")
        self.kernel.log(
            self._component,
            "onboarding_resolved",
            session_id=session_id,
            imsi=item["imsi"],
            approved=approve,
            actor=actor,
        )
        self.kernel.after(
            0,
            f"gateway.{item['domain']}",
            "onboarding_decision",
            {"session_id": session_id, "approve": approve, "actor": actor},
        )

    # -- operator actions ------------------------------------------------------------------

    def trigger_roam(self, imsi: str, to_domain: str) -> str:
        """Start a SIM switch for the subscriber's active session; returns the source domain."""
        if to_domain not in self.domains:
            raise DomainUnreachable(f"domain {to_domain!r} is not registered")
        for name in sorted(self.domains):
            core = self.domains[name].gateway.core
            session = core.active_session(imsi)
            if session is None:
                continue
            if name == to_domain:
                raise AlreadyAttached(f"imsi {imsi} is already served by {to_domain}")
            core.switch_sim(imsi, to_domain)
            return name
        raise NoActiveSession(f"imsi {imsi} has no active session in any domain")

    # -- event dispatch ----------------------------------------------------------------------

    def _on_event(self, ev: SimEvent) -> None:
        if ev.kind == "push_deliver":
            self._deliver_push(ev.payload)
        elif ev.kind == "push_check":
            self._check_push(ev.payload)
        elif ev.kind == "reconcile_tick":
            self.reconcile()
            self._schedule_next_reconcile()
        elif ev.kind == "session_changed":
            domain = ev.payload["domain"]
            link = self.domains.get(domain)
            if link is not None and link.pending is None:
                self.push_program(domain)
        elif ev.kind == "onboarding_pending":
            item = dict(ev.payload)
            self.onboarding[item["session_id"]] = item
            self.kernel.log(
                self._component,
                "onboarding_queued",
                session_id=item["session_id"],
                imsi=item["imsi"],
                domain=item["domain"],
            )
        else:
            raise ValueError(f"unexpected event kind for controller: {ev.kind}")
