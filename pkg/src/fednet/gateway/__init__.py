"""Open-gateway layer: attach mediation, tokens, federation, route derivation."""

from .policy import (
    ACTIONS,
    INTERNET_RESOURCE,
    AccessRequest,
    AuthorizationPolicy,
    AuthzDecision,
    MalformedPolicy,
    RequesterContext,
    ServiceEndpoint,
    Subject,
    UnknownService,
    catalog_pairs,
    evaluate_access,
    parse_rule,
    permitted_pairs,
    resource_matches,
    rule_matches,
    validate_rules,
)
from .service import Gateway, NoFederationPeer, derive_route_program
from .wire import (
    AccessToken,
    ContinuityToken,
    FederationAssertion,
    assertion_mac,
    token_mac,
    verify_assertion,
    verify_token,
)

__all__ = [
    "ACTIONS",
    "INTERNET_RESOURCE",
    "AccessRequest",
    "AccessToken",
    "AuthorizationPolicy",
    "AuthzDecision",
    "ContinuityToken",
    "FederationAssertion",
    "Gateway",
    "MalformedPolicy",
    "NoFederationPeer",
    "RequesterContext",
    "ServiceEndpoint",
    "Subject",
    "UnknownService",
    "assertion_mac",
    "catalog_pairs",
    "derive_route_program",
    "evaluate_access",
    "parse_rule",
    "permitted_pairs",
    "resource_matches",
    "rule_matches",
    "token_mac",
    "validate_rules",
    "verify_assertion",
    "verify_token",
]
