"""Policy-enforcement router: longest-prefix routes plus ordered ACLs.

The router holds exactly one routing table and one ACL table at a time.
``apply_program`` swaps both in a single assignment, so a concurrent
reader never observes a half-applied program.  Route lookup is
longest-prefix match; a miss routes to "drop".  Flow evaluation walks
ACLs in ascending priority and stops at the first match; no match is a
deny (default-deny posture).
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass

from .errors import SimError


class DuplicatePrefix(SimError):
    """Two route entries in one program share a prefix."""


class DuplicatePriority(SimError):
    """Two ACL rules in one program share a priority."""


@dataclass(frozen=True)
class RouteEntry:
    prefix: str
    next_hop: str


@dataclass(frozen=True)
class AclRule:
    priority: int
    src: str
    dst: str
    dst_port: int | str
    proto: str
    action: str


@dataclass(frozen=True)
class FlowQuery:
    src: str
    dst: str
    dst_port: int
    proto: str


@dataclass(frozen=True)
class FlowDecision:
    action: str
    matched: int | str
    egress: str


@dataclass(frozen=True)
class _CompiledRoute:
    network: int
    mask: int
    prefixlen: int
    cidr: str
    next_hop: str


@dataclass(frozen=True)
class _CompiledAcl:
    rule: AclRule
    src_net: int
    src_mask: int
    dst_net: int
    dst_mask: int


def _parse_cidr(text: str) -> ipaddress.IPv4Network:
    return ipaddress.ip_network(text, strict=True)


def _compile_routes(routes: list[RouteEntry]) -> tuple[_CompiledRoute, ...]:
    seen: set[tuple[int, int]] = set()
    compiled = []
    for entry in routes:
        net = _parse_cidr(entry.prefix)
        key = (int(net.network_address), net.prefixlen)
        if key in seen:
            raise DuplicatePrefix(f"prefix {net.with_prefixlen} appears twice")
        seen.add(key)
        compiled.append(
            _CompiledRoute(
                network=int(net.network_address),
                mask=int(net.netmask),
                prefixlen=net.prefixlen,
                cidr=net.with_prefixlen,
                next_hop=entry.next_hop,
            )
        )
    # Longest prefix first; equal lengths ordered by address for a stable dump.
    compiled.sort(key=lambda r: (-r.prefixlen, r.network))
    return tuple(compiled)


def _compile_acls(acls: list[AclRule]) -> tuple[_CompiledAcl, ...]:
    seen: set[int] = set()
    compiled = []
    for rule in acls:
        if rule.action not in ("permit", "deny"):
            raise ValueError(f"acl action must be permit or deny, got {rule.action!r}")
        if rule.proto not in ("tcp", "udp", "*"):
            raise ValueError(f"acl proto must be tcp, udp or *, got {rule.proto!r}")
        if rule.priority in seen:
            raise DuplicatePriority(f"acl priority {rule.priority} appears twice")
        seen.add(rule.priority)
        src = _parse_cidr(rule.src)
        dst = _parse_cidr(rule.dst)
        compiled.append(
            _CompiledAcl(
                rule=rule,
                src_net=int(src.network_address),
                src_mask=int(src.netmask),
                dst_net=int(dst.network_address),
                dst_mask=int(dst.netmask),
            )
        )
    compiled.sort(key=lambda c: c.rule.priority)
    return tuple(compiled)


class PepRouter:
    """One enforcement point, programmed atomically by the controller."""

    def __init__(self, kernel=None, domain: str = "") -> None:
        self.domain = domain
        self._kernel = kernel
        # (routes, acls, version): replaced wholesale, never mutated.
        self._tables: tuple[tuple[_CompiledRoute, ...], tuple[_CompiledAcl, ...], int] = ((), (), 0)

    @property
    def version(self) -> int:
        return self._tables[2]

    def apply_program(self, routes: list[RouteEntry], acls: list[AclRule], version: int) -> None:
        """Validate and install a full program in one atomic swap."""
        compiled = (_compile_routes(routes), _compile_acls(acls), version)
        self._tables = compiled
        if self._kernel is not None:
            self._kernel.log(
                f"pep.{self.domain}",
                "program_applied",
                version=version,
                routes=len(compiled[0]),
                acls=len(compiled[1]),
            )

    def lookup(self, dst: str) -> str:
        """Longest-prefix route lookup; unrouted destinations drop."""
        addr = int(ipaddress.ip_address(dst))
        routes = self._tables[0]
        for route in routes:
            if addr & route.mask == route.network:
                return route.next_hop
        return "drop"

    def evaluate_flow(self, query: FlowQuery) -> FlowDecision:
        """First-match ACL walk in ascending priority; default deny."""
        src = int(ipaddress.ip_address(query.src))
        dst = int(ipaddress.ip_address(query.dst))
        for entry in self._tables[1]:
            rule = entry.rule
            if src & entry.src_mask != entry.src_net:
                continue
            if dst & entry.dst_mask != entry.dst_net:
                continue
            if rule.dst_port != "*" and rule.dst_port != query.dst_port:
                continue
            if rule.proto != "*" and rule.proto != query.proto:
                continue
            if rule.action == "deny":
                return FlowDecision(action="deny", matched=rule.priority, egress="none")
            return FlowDecision(action="permit", matched=rule.priority, egress=self.lookup(query.dst))
        return FlowDecision(action="deny", matched="default", egress="none")

    def render_table(self) -> str:
        """Deterministic dump: routes longest-prefix first, then ACLs by priority."""
        routes, acls, _ = self._tables
        lines = [f"route {r.cidr} -> {r.next_hop}" for r in routes]
        lines += [
            "acl {priority} {action} {src} -> {dst} port {port} proto {proto}".format(
                priority=c.rule.priority,
                action=c.rule.action,
                src=c.rule.src,
                dst=c.rule.dst,
                port=c.rule.dst_port,
                proto=c.rule.proto,
            )
            for c in acls
        ]
        return "\n".join(lines) + ("\n" if lines else "")
