"""Attribute-based access policy model and evaluator.

Policies are flat rules.  A rule matches a request when every populated
subject attribute matches the requester, the action is equal, the resource
pattern covers the requested resource, and the rule scope admits the
request path (local vs federation).  Among matching rules the winner is
the one with the lowest priority number; ties are broken by effect
severity (deny before manual before permit) and then by rule id.  No
matching rule means deny.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import SimError

ACTIONS = ("attach", "access", "internet", "manage")
EFFECTS = ("permit", "deny", "manual")
SCOPES = ("local", "federated", "any")

# Lower rank wins a priority tie: a deny is never shadowed by an equal
# priority permit, and manual review is never silently upgraded.
_EFFECT_RANK = {"deny": 0, "manual": 1, "permit": 2}

# Resource name used by internet-bound requests.  Patterns in rules may
# still use "*" wildcards; requests must name a concrete resource unless
# the action is attach.
INTERNET_RESOURCE = "internet"


class MalformedPolicy(SimError):
    """A rule or rule set failed structural validation."""


class UnknownService(SimError):
    """A referenced service name is absent from the service catalog."""


@dataclass(frozen=True)
class ServiceEndpoint:
    """One internal service reachable through the enforcement fabric."""

    name: str
    ip: str
    port: int
    slice_id: str


@dataclass(frozen=True)
class Subject:
    """Subject attribute constraints of a rule.

    ``None`` for a set-valued attribute means "any".  ``roles`` matches
    if the requester holds at least one listed role.  ``domains``
    constrains the requester's home domain.  ``require_vpn`` restricts
    the rule to requests arriving through a VPN tunnel.
    """

    roles: frozenset[str] | None = None
    device_types: frozenset[str] | None = None
    min_posture: int = 0
    domains: frozenset[str] | None = None
    require_vpn: bool = False


@dataclass(frozen=True)
class AuthorizationPolicy:
    rule_id: str
    priority: int
    subject: Subject
    action: str
    resource: str
    effect: str
    scope: str = "local"


@dataclass(frozen=True)
class AccessRequest:
    """One authorization question posed to a gateway."""

    imsi: str
    domain: str
    requested_action: str
    resource: str
    session_id: int | None = None
    via_federation: bool = False
    via_vpn: bool = False

    def __post_init__(self) -> None:
        if self.requested_action not in ACTIONS:
            raise ValueError(f"unknown action {self.requested_action!r}")
        if (self.resource == "*") != (self.requested_action == "attach"):
            raise ValueError("resource '*' is reserved for attach requests")


@dataclass(frozen=True)
class AuthzDecision:
    """Outcome of one evaluation.

    ``permitted`` carries the effective (action, resource) grant set when
    the decision backs a session admission; route programs are derived
    from it.  A deny has no slice and no obligations.
    """

    effect: str
    matched_rule: str
    slice_id: str | None = None
    obligations: tuple[str, ...] = ()
    reason: str | None = None
    permitted: frozenset[tuple[str, str]] | None = None


def _parse_subject(raw: object, where: str) -> Subject:
    if not isinstance(raw, dict):
        raise MalformedPolicy(f"{where}: subject must be an object")
    known = {"roles", "device_types", "min_posture", "domains", "require_vpn"}
    extra = set(raw) - known
    if extra:
        raise MalformedPolicy(f"{where}: unknown subject keys {sorted(extra)}")

    def set_field(key: str) -> frozenset[str] | None:
        value = raw.get(key, "*")
        if value == "*":
            return None
        if not isinstance(value, list) or not value or not all(
            isinstance(v, str) and v for v in value
        ):
            raise MalformedPolicy(f"{where}: {key} must be '*' or a non-empty string list")
        return frozenset(value)

    posture = raw.get("min_posture", 0)
    if not isinstance(posture, int) or isinstance(posture, bool) or not 0 <= posture <= 3:
        raise MalformedPolicy(f"{where}: min_posture must be an integer in 0..3")
    require_vpn = raw.get("require_vpn", False)
    if not isinstance(require_vpn, bool):
        raise MalformedPolicy(f"{where}: require_vpn must be a boolean")
    return Subject(
        roles=set_field("roles"),
        device_types=set_field("device_types"),
        min_posture=posture,
        domains=set_field("domains"),
        require_vpn=require_vpn,
    )


def parse_rule(raw: object) -> AuthorizationPolicy:
    """Build one rule from plain JSON data, raising MalformedPolicy on any defect."""
    if not isinstance(raw, dict):
        raise MalformedPolicy("rule must be an object")
    rule_id = raw.get("rule_id")
    where = f"rule {rule_id!r}" if isinstance(rule_id, str) else "rule"
    known = {"rule_id", "priority", "subject", "action", "resource", "effect", "scope"}
    extra = set(raw) - known
    if extra:
        raise MalformedPolicy(f"{where}: unknown keys {sorted(extra)}")
    if not isinstance(rule_id, str) or not rule_id:
        raise MalformedPolicy("rule: rule_id must be a non-empty string")
    priority = raw.get("priority")
    if not isinstance(priority, int) or isinstance(priority, bool) or priority < 0:
        raise MalformedPolicy(f"{where}: priority must be a non-negative integer")
    action = raw.get("action")
    if action not in ACTIONS:
        raise MalformedPolicy(f"{where}: action must be one of {list(ACTIONS)}")
    effect = raw.get("effect")
    if effect not in EFFECTS:
        raise MalformedPolicy(f"{where}: effect must be one of {list(EFFECTS)}")
    scope = raw.get("scope", "local")
    if scope not in SCOPES:
        raise MalformedPolicy(f"{where}: scope must be one of {list(SCOPES)}")
    resource = raw.get("resource")
    if not isinstance(resource, str) or not resource:
        raise MalformedPolicy(f"{where}: resource must be a non-empty string")
    star = resource.count("*")
    if star > 1 or (star == 1 and not resource.endswith("*")):
        raise MalformedPolicy(f"{where}: at most one '*' allowed, only at the end")
    subject = _parse_subject(raw.get("subject", {}), where)
    return AuthorizationPolicy(
        rule_id=rule_id,
        priority=priority,
        subject=subject,
        action=action,
        resource=resource,
        effect=effect,
        scope=scope,
    )


def validate_rules(raw_rules: object) -> list[AuthorizationPolicy]:
    """Parse a full rule list; rule ids must be unique."""
    if not isinstance(raw_rules, list):
        raise MalformedPolicy("rules must be a list")
    rules = [parse_rule(r) for r in raw_rules]
    seen: set[str] = set()
    for rule in rules:
        if rule.rule_id in seen:
            raise MalformedPolicy(f"duplicate rule_id {rule.rule_id!r}")
        seen.add(rule.rule_id)
    return rules


def resource_matches(pattern: str, resource: str) -> bool:
    if pattern.endswith("*"):
        return resource.startswith(pattern[:-1])
    return pattern == resource


@dataclass(frozen=True)
class RequesterContext:
    """Attributes of the requesting subscriber as seen by the evaluator."""

    imsi: str
    roles: frozenset[str]
    device_type: str
    posture: int
    home_domain: str


def rule_matches(rule: AuthorizationPolicy, request: AccessRequest, ctx: RequesterContext) -> bool:
    if rule.action != request.requested_action:
        return False
    if rule.scope == "local" and request.via_federation:
        return False
    if rule.scope == "federated" and not request.via_federation:
        return False
    s = rule.subject
    if s.roles is not None and not (s.roles & ctx.roles):
        return False
    if s.device_types is not None and ctx.device_type not in s.device_types:
        return False
    if ctx.posture < s.min_posture:
        return False
    if s.domains is not None and ctx.home_domain not in s.domains:
        return False
    if s.require_vpn and not request.via_vpn:
        return False
    return resource_matches(rule.resource, request.resource)


def evaluate_access(
    request: AccessRequest,
    ctx: RequesterContext,
    rules: list[AuthorizationPolicy],
    role_slice_map: dict[str, str] | None = None,
) -> AuthzDecision:
    """Evaluate one request against a rule list.

    Pure function of its inputs.  Default decision is deny with
    matched_rule "default".  On a permitted attach the slice is taken
    from the role-to-slice map via the lexicographically first mapped
    role the requester holds.
    """
    matching = [r for r in rules if rule_matches(r, request, ctx)]
    if not matching:
        return AuthzDecision(effect="deny", matched_rule="default", reason="no_matching_rule")
    winner = min(matching, key=lambda r: (r.priority, _EFFECT_RANK[r.effect], r.rule_id))
    slice_id = None
    obligations: tuple[str, ...] = ()
    if winner.effect == "permit" and request.requested_action == "attach":
        if role_slice_map:
            for role in sorted(ctx.roles):
                if role in role_slice_map:
                    slice_id = role_slice_map[role]
                    break
        obligations = (f"route-program/{ctx.imsi}",)
    return AuthzDecision(
        effect=winner.effect,
        matched_rule=winner.rule_id,
        slice_id=slice_id,
        obligations=obligations,
    )


def catalog_pairs(service_catalog: dict[str, object]) -> tuple[tuple[str, str], ...]:
    """The full (action, resource) grant space over a service catalog."""
    pairs = [("access", name) for name in service_catalog]
    pairs += [("manage", name) for name in service_catalog]
    pairs.append(("internet", INTERNET_RESOURCE))
    return tuple(sorted(pairs))


def permitted_pairs(
    ctx: RequesterContext,
    rules: list[AuthorizationPolicy],
    service_catalog: dict[str, object],
    via_federation: bool = False,
    via_vpn: bool = False,
) -> frozenset[tuple[str, str]]:
    """Every catalog pair the subject would be permitted, one evaluation each."""
    granted = set()
    for action, resource in catalog_pairs(service_catalog):
        request = AccessRequest(
            imsi=ctx.imsi,
            domain=ctx.home_domain,
            requested_action=action,
            resource=resource,
            via_federation=via_federation,
            via_vpn=via_vpn,
        )
        if evaluate_access(request, ctx, rules).effect == "permit":
            granted.add((action, resource))
    return frozenset(granted)
