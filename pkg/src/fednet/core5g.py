"""Simulated 5G core for one network domain.

A scenario instantiates one core per domain (private, public). The core owns
the subscriber registry, PDU session lifecycle and slice instantiation, but
never admits a session on its own authority: ``attach`` only creates a
pending session and emits an access request to the domain gateway, which
calls back with ``admit_session`` or ``reject_session``. IP addresses are
allocated lowest-free-first from the domain pool so logs are stable.

Dual-SIM devices are a single Subscriber with one profile per domain; a roam
is a make-before-break sequence orchestrated through the gateways (the old
session releases only after the new one is active).
"""

from __future__ import annotations

import ipaddress
import itertools
from dataclasses import dataclass, field

from .errors import SimError
from .kernel import Kernel, SimEvent


class DuplicateImsi(SimError):
    pass


class UnknownImsi(SimError):
    pass


class NoSimProfile(SimError):
    pass


class AlreadyAttached(SimError):
    pass


class UnknownSession(SimError):
    pass


class NotPending(SimError):
    pass


class PoolExhausted(SimError):
    pass


class NoActiveSession(SimError):
    pass


class UnknownSlice(SimError):
    pass


class IdAllocator:
    """Monotonic id source, shared across domains so session ids are scenario-unique."""

    def __init__(self, start: int = 1):
        self._counter = itertools.count(start)

    def next(self) -> int:
        return next(self._counter)


@dataclass
class Subscriber:
    imsi: str
    home_domain: str
    sim_profiles: list[str]
    roles: frozenset[str]
    device_type: str
    posture: int
    subscription_active: bool = True

    def __post_init__(self):
        if len(self.imsi) != 15 or not self.imsi.isdigit():
            raise ValueError(f"imsi must be 15 decimal digits: {self.imsi!r}")
        if not self.sim_profiles:
            raise ValueError("sim_profiles must be non-empty")
        if len(set(self.sim_profiles)) != len(self.sim_profiles):
            raise ValueError("duplicate domain in sim_profiles")
        if not 0 <= self.posture <= 3:
            raise ValueError(f"posture must be 0..3, got {self.posture}")
        self.roles = frozenset(self.roles)


@dataclass(frozen=True)
class SubscriberContext:
    """Read-only projection of a Subscriber handed to the gateway."""

    imsi: str
    subscription_active: bool
    device_type: str
    posture: int
    roles: frozenset[str]
    home_domain: str


@dataclass(frozen=True)
class Slice:
    slice_id: str
    qos_class: str
    isolation_tag: str


@dataclass
class PduSession:
    session_id: int
    imsi: str
    domain: str
    ip: str | None = None
    slice_id: str | None = None
    state: str = "pending"
    vpn_tunnel: bool = False


class Core5G:
    """One domain's core: registry, sessions, slices, dual-SIM switching."""

    def __init__(
        self,
        kernel: Kernel,
        domain: str,
        pool_cidr: str,
        slice_catalog: dict[str, Slice],
        session_ids: IdAllocator | None = None,
    ):
        self.kernel = kernel
        self.domain = domain
        self.pool = ipaddress.IPv4Network(pool_cidr)
        self.slice_catalog = dict(slice_catalog)
        self.session_ids = session_ids or IdAllocator()
        self.subscribers: dict[str, Subscriber] = {}
        self.sessions: dict[int, PduSession] = {}
        self.instantiated_slices: dict[str, Slice] = {}
        self._component = f"core5g.{domain}"
        kernel.register(self._component, self._on_event)

    # -- registry ----------------------------------------------------------

    def register_subscriber(self, sub: Subscriber) -> None:
        if sub.imsi in self.subscribers:
            raise DuplicateImsi(f"imsi {sub.imsi} already registered in {self.domain}")
        self.subscribers[sub.imsi] = sub

    def query_subscriber_context(self, imsi: str) -> SubscriberContext:
        sub = self.subscribers.get(imsi)
        if sub is None:
            raise UnknownImsi(f"imsi {imsi} not registered in {self.domain}")
        return SubscriberContext(
            imsi=sub.imsi,
            subscription_active=sub.subscription_active,
            device_type=sub.device_type,
            posture=sub.posture,
            roles=sub.roles,
            home_domain=sub.home_domain,
        )

    # -- session lifecycle --------------------------------------------------

    def _session_of(self, imsi: str, live_only: bool = True) -> PduSession | None:
        for s in self.sessions.values():
            if s.imsi == imsi and (s.state != "released" if live_only else True):
                return s
        return None

    def attach(self, imsi: str, via_federation: bool = False, vpn: bool = False) -> PduSession:
        """Create a pending session and hand admission to the gateway."""
        sub = self.subscribers.get(imsi)
        if sub is None:
            raise UnknownImsi(f"imsi {imsi} not registered in {self.domain}")
        if self.domain not in sub.sim_profiles:
            raise NoSimProfile(f"imsi {imsi} has no SIM profile for {self.domain}")
        if self._session_of(imsi) is not None:
            raise AlreadyAttached(f"imsi {imsi} already has a live session in {self.domain}")
        session = PduSession(
            session_id=self.session_ids.next(), imsi=imsi, domain=self.domain, vpn_tunnel=vpn
        )
        self.sessions[session.session_id] = session
        self.kernel.log(
            self._component,
            "attach_requested",
            imsi=imsi,
            domain=self.domain,
            session_id=session.session_id,
            via_federation=via_federation,
            vpn=vpn,
        )
        self.kernel.after(
            0,
            f"gateway.{self.domain}",
            "access_request",
            {
                "session_id": session.session_id,
                "imsi": imsi,
                "via_federation": via_federation,
                "via_vpn": vpn,
            },
        )
        return session

    def _allocate_ip(self) -> str:
        in_use = {
            int(ipaddress.IPv4Address(s.ip))
            for s in self.sessions.values()
            if s.state == "active" and s.ip
        }
        base = int(self.pool.network_address) + 2
        last = int(self.pool.broadcast_address) - 1
        for candidate in range(base, last + 1):
            if candidate not in in_use:
                return str(ipaddress.IPv4Address(candidate))
        raise PoolExhausted(f"no free address in {self.pool} for {self.domain}")

    def _instantiate_slice(self, slice_id: str) -> None:
        if slice_id in self.instantiated_slices:
            return
        spec = self.slice_catalog.get(slice_id)
        if spec is None:
            raise UnknownSlice(f"slice {slice_id} not in {self.domain} catalog")
        self.instantiated_slices[slice_id] = spec
        self.kernel.log(
            self._component,
            "slice_instantiated",
            domain=self.domain,
            slice_id=slice_id,
            qos_class=spec.qos_class,
        )

    def admit_session(self, session_id: int, slice_id: str) -> PduSession:
        session = self.sessions.get(session_id)
        if session is None:
            raise UnknownSession(f"no session {session_id} in {self.domain}")
        if session.state != "pending":
            raise NotPending(f"session {session_id} is {session.state}")
        self._instantiate_slice(slice_id)
        session.ip = self._allocate_ip()
        session.slice_id = slice_id
        session.state = "active"
        self.kernel.log(
            self._component,
            "attach_admitted",
            imsi=session.imsi,
            domain=self.domain,
            session_id=session_id,
            ip=session.ip,
            slice_id=slice_id,
        )
        return session

    def reject_session(self, session_id: int, reason: str) -> PduSession:
        session = self.sessions.get(session_id)
        if session is None:
            raise UnknownSession(f"no session {session_id} in {self.domain}")
        if session.state != "pending":
            raise NotPending(f"session {session_id} is {session.state}")
        session.state = "released"
        self.kernel.log(
            self._component,
            "attach_denied",
            imsi=session.imsi,
            domain=self.domain,
            session_id=session_id,
            reason=reason,
        )
        return session

    def release_session(self, session_id: int, reason: str) -> PduSession:
        session = self.sessions.get(session_id)
        if session is None:
            raise UnknownSession(f"no session {session_id} in {self.domain}")
        if session.state == "released":
            raise NotPending(f"session {session_id} already released")
        session.state = "released"
        self.kernel.log(
            self._component,
            "session_released",
            imsi=session.imsi,
            domain=self.domain,
            session_id=session_id,
            reason=reason,
        )
        return session

    def active_session(self, imsi: str) -> PduSession | None:
        s = self._session_of(imsi)
        return s if s is not None and s.state == "active" else None

    def live_sessions(self) -> list[PduSession]:
        """Non-released sessions, stable order (by session id)."""
        return [s for _, s in sorted(self.sessions.items()) if s.state != "released"]

    # -- dual-SIM switch ----------------------------------------------------

    def switch_sim(self, imsi: str, to_domain: str) -> None:
        """Start a make-before-break roam; completion arrives as events."""
        sub = self.subscribers.get(imsi)
        if sub is None:
            raise UnknownImsi(f"imsi {imsi} not registered in {self.domain}")
        session = self.active_session(imsi)
        if session is None:
            raise NoActiveSession(f"imsi {imsi} has no active session in {self.domain}")
        if to_domain not in sub.sim_profiles:
            raise NoSimProfile(f"imsi {imsi} has no SIM profile for {to_domain}")
        self.kernel.after(
            0,
            f"gateway.{self.domain}",
            "roam_request",
            {"imsi": imsi, "to_domain": to_domain, "old_session_id": session.session_id},
        )

    def complete_roam(self, imsi: str, to_domain: str, old_session_id: int) -> None:
        """Release the pre-roam session once the target session is active."""
        self.release_session(old_session_id, reason="sim_switch")
        self.kernel.log(
            self._component,
            "sim_switched",
            imsi=imsi,
            domain=self.domain,
            to_domain=to_domain,
            old_session_id=old_session_id,
        )

    # -- event dispatch -----------------------------------------------------

    def _on_event(self, ev: SimEvent) -> None:
        if ev.kind == "attach_cmd":
            self.attach(
                ev.payload["imsi"],
                via_federation=ev.payload.get("via_federation", False),
                vpn=ev.payload.get("vpn", False),
            )
        elif ev.kind == "release_cmd":
            self.complete_roam(
                ev.payload["imsi"], ev.payload["to_domain"], ev.payload["old_session_id"]
            )
        else:
            raise ValueError(f"unexpected event kind for core: {ev.kind}")
