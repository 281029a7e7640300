"""Signed credential records exchanged between gateways.

Canonical byte layout (the MAC input) for every record type:

    canonical = MAGIC || TYPE || field_1 || ... || field_n
    MAGIC     = the four bytes "FNT1"
    TYPE      = one byte: 0x01 access token, 0x02 federation assertion
    field_i   = u32 big-endian byte length || value bytes

Field values are UTF-8 strings produced as follows:

    string   -> as-is
    integer  -> decimal ASCII, no sign for non-negative, "-" prefix otherwise
    boolean  -> "1" or "0"
    set of strings          -> members sorted, joined with ","
    set of (action, resource) pairs -> "action:resource" strings sorted, joined with ","

The MAC is HMAC-SHA256 over the canonical bytes, full 32-byte digest.
A record verifies when its MAC matches under the shared key and the
clock has not reached ``expires_at`` (validity is exclusive: a record
expiring at T is invalid at T).
"""

from __future__ import annotations

import hmac
import hashlib
from dataclasses import dataclass

_MAGIC = b"FNT1"
_TYPE_TOKEN = b"\x01"
_TYPE_ASSERTION = b"\x02"


def _field(value: str) -> bytes:
    data = value.encode("utf-8")
    return len(data).to_bytes(4, "big") + data


def _set_field(values: frozenset[str]) -> str:
    return ",".join(sorted(values))


def _pairs_field(pairs: frozenset[tuple[str, str]]) -> str:
    return ",".join(sorted(f"{action}:{resource}" for action, resource in pairs))


@dataclass(frozen=True)
class ContinuityToken:
    """Stable service identity carried across a roam."""

    service_session_id: int
    issued_in: str


@dataclass(frozen=True)
class AccessToken:
    token_id: str
    imsi: str
    domain: str
    roles: frozenset[str]
    permitted: frozenset[tuple[str, str]]
    issued_at: int
    expires_at: int
    mac: bytes = b""


@dataclass(frozen=True)
class FederationAssertion:
    imsi: str
    home_domain: str
    roles: frozenset[str]
    posture: int
    permitted: frozenset[tuple[str, str]]
    continuity: ContinuityToken
    expires_at: int
    mac: bytes = b""


def token_bytes(token: AccessToken) -> bytes:
    return (
        _MAGIC
        + _TYPE_TOKEN
        + _field(token.token_id)
        + _field(token.imsi)
        + _field(token.domain)
        + _field(_set_field(token.roles))
        + _field(_pairs_field(token.permitted))
        + _field(str(token.issued_at))
        + _field(str(token.expires_at))
    )


def assertion_bytes(assertion: FederationAssertion) -> bytes:
    return (
        _MAGIC
        + _TYPE_ASSERTION
        + _field(assertion.imsi)
        + _field(assertion.home_domain)
        + _field(_set_field(assertion.roles))
        + _field(str(assertion.posture))
        + _field(_pairs_field(assertion.permitted))
        + _field(str(assertion.continuity.service_session_id))
        + _field(assertion.continuity.issued_in)
        + _field(str(assertion.expires_at))
    )


def token_mac(token: AccessToken, key: bytes) -> bytes:
    return hmac.new(key, token_bytes(token), hashlib.sha256).digest()


def assertion_mac(assertion: FederationAssertion, key: bytes) -> bytes:
    return hmac.new(key, assertion_bytes(assertion), hashlib.sha256).digest()


def verify_token(token: AccessToken, key: bytes, now: int) -> bool:
    if not hmac.compare_digest(token.mac, token_mac(token, key)):
        return False
    return now < token.expires_at


def verify_assertion(assertion: FederationAssertion, key: bytes, now: int) -> bool:
    if not hmac.compare_digest(assertion.mac, assertion_mac(assertion, key)):
        return False
    return now < assertion.expires_at
