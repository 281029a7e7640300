"""Scenario files: the declarative input that drives a run.

A scenario is one JSON document holding the world description (domains,
services, subscribers, rules, bus devices) plus a timeline of actions
and a list of expectations.  ``validate`` collects every problem it can
find instead of stopping at the first, so a scenario author sees the
full damage in one pass.
"""

from __future__ import annotations

import ipaddress
import json
from dataclasses import dataclass, field

from .errors import SimError
from .gateway.policy import ACTIONS, MalformedPolicy, validate_rules
from .iot.knx import GroupAddress, IndividualAddress, OutOfRange, known_dpts
from .iot.pubsub import BadFilter, validate_filter, validate_topic

SCHEMA_VERSION = 1

TIMELINE_ACTIONS = (
    "attach",
    "detach",
    "roam",
    "flow_query",
    "sample",
    "publish",
    "group_read",
    "policy",
    "fault",
    "onboarding_decision",
    "commission",
)

EXPECTATION_TYPES = (
    "event_exists",
    "event_absent",
    "event_count",
    "ordering",
    "latency_bound",
)


class ParseError(SimError):
    """Scenario file is not valid JSON or not an object."""


class ValidationError(SimError):
    """Scenario content failed validation; ``errors`` lists every finding."""

    def __init__(self, errors: list[str]):
        super().__init__(f"{len(errors)} validation error(s)")
        self.errors = errors


@dataclass
class Scenario:
    name: str
    version: int
    seed: int
    horizon_ms: int
    domains: dict
    federation: dict
    controller: dict
    services: dict
    role_slice_map: dict
    rules: list
    subscribers: list
    iot: dict
    timeline: list
    expectations: list
    access_matrix: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


def loads(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ParseError("scenario must be a JSON object")
    return Scenario(
        name=data.get("name", "unnamed"),
        version=data.get("version", 0),
        seed=data.get("seed", 0),
        horizon_ms=data.get("horizon_ms", 0),
        domains=data.get("domains", {}),
        federation=data.get("federation", {}),
        controller=data.get("controller", {}),
        services=data.get("services", {}),
        role_slice_map=data.get("role_slice_map", {}),
        rules=data.get("rules", []),
        subscribers=data.get("subscribers", []),
        iot=data.get("iot", {}),
        timeline=data.get("timeline", []),
        expectations=data.get("expectations", []),
        access_matrix=data.get("access_matrix", {}),
        raw=data,
    )


def load(path: str) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read scenario: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    return loads(data)


def _check_cidr(errors: list[str], where: str, value) -> None:
    try:
        ipaddress.ip_network(value, strict=True)
    except (TypeError, ValueError):
        errors.append(f"{where}: invalid CIDR {value!r}")


def _check_ip(errors: list[str], where: str, value) -> None:
    try:
        ipaddress.ip_address(value)
    except (TypeError, ValueError):
        errors.append(f"{where}: invalid IP address {value!r}")


def _check_hex_key(errors: list[str], where: str, value) -> None:
    if not isinstance(value, str) or not value:
        errors.append(f"{where}: key must be a non-empty hex string")
        return
    try:
        bytes.fromhex(value)
    except ValueError:
        errors.append(f"{where}: key must be a non-empty hex string")


def _check_ga(errors: list[str], where: str, value) -> None:
    if not isinstance(value, str):
        errors.append(f"{where}: group address must be a string")
        return
    try:
        GroupAddress.parse(value)
    except OutOfRange as exc:
        errors.append(f"{where}: {exc}")


def validate(sc: Scenario) -> list[str]:
    """Every problem found in the scenario, empty when it is runnable."""
    errors: list[str] = []
    if sc.version != SCHEMA_VERSION:
        errors.append(f"version: expected {SCHEMA_VERSION}, got {sc.version!r}")
    if not isinstance(sc.seed, int) or isinstance(sc.seed, bool):
        errors.append(f"seed: must be an integer, got {sc.seed!r}")
    if not isinstance(sc.horizon_ms, int) or sc.horizon_ms <= 0:
        errors.append(f"horizon_ms: must be a positive integer, got {sc.horizon_ms!r}")

    # domains
    if not isinstance(sc.domains, dict) or not sc.domains:
        errors.append("domains: at least one domain is required")
        domains = {}
    else:
        domains = sc.domains
    all_slices: dict[str, set[str]] = {}
    for name in sorted(domains):
        dom = domains[name]
        where = f"domains.{name}"
        if not isinstance(dom, dict):
            errors.append(f"{where}: must be an object")
            continue
        _check_cidr(errors, f"{where}.pool", dom.get("pool"))
        _check_hex_key(errors, f"{where}.gateway_key", dom.get("gateway_key"))
        slices = dom.get("slices")
        if not isinstance(slices, dict) or not slices:
            errors.append(f"{where}.slices: at least one slice is required")
            all_slices[name] = set()
        else:
            all_slices[name] = set(slices)
            for sid in sorted(slices):
                entry = slices[sid]
                if not isinstance(entry, dict) or not entry.get("qos_class") or not entry.get("isolation_tag"):
                    errors.append(f"{where}.slices.{sid}: needs qos_class and isolation_tag")
    pools = [d.get("pool") for d in domains.values() if isinstance(d, dict)]
    if len(set(filter(None, pools))) != len(list(filter(None, pools))):
        errors.append("domains: address pools must be disjoint (duplicate pool)")

    # federation and controller knobs
    if sc.federation:
        _check_hex_key(errors, "federation.key", sc.federation.get("key"))
        ttl = sc.federation.get("assertion_ttl_ms", 600000)
        if not isinstance(ttl, int) or ttl <= 0:
            errors.append("federation.assertion_ttl_ms: must be a positive integer")
    for knob in ("retry_ms", "max_retries", "reconcile_interval_ms"):
        value = sc.controller.get(knob)
        if value is not None and (not isinstance(value, int) or value <= 0):
            errors.append(f"controller.{knob}: must be a positive integer")

    # services
    service_ips: set[str] = set()
    for name in sorted(sc.services if isinstance(sc.services, dict) else {}):
        svc = sc.services[name]
        where = f"services.{name}"
        if not isinstance(svc, dict):
            errors.append(f"{where}: must be an object")
            continue
        _check_ip(errors, f"{where}.ip", svc.get("ip"))
        port = svc.get("port")
        if not isinstance(port, int) or not 1 <= port <= 65535:
            errors.append(f"{where}.port: must be an integer in 1..65535")
        if isinstance(svc.get("ip"), str):
            if svc["ip"] in service_ips:
                errors.append(f"{where}.ip: duplicate service IP {svc['ip']}")
            service_ips.add(svc["ip"])
        slice_id = svc.get("slice_id")
        if slice_id and not any(slice_id in s for s in all_slices.values()):
            errors.append(f"{where}.slice_id: unknown slice {slice_id!r}")

    # rules
    try:
        validate_rules(sc.rules)
    except MalformedPolicy as exc:
        errors.append(f"rules: {exc}")
    for i, rule in enumerate(sc.rules if isinstance(sc.rules, list) else []):
        if not isinstance(rule, dict):
            continue
        resource = rule.get("resource")
        action = rule.get("action")
        if (
            action in ("access", "manage")
            and isinstance(resource, str)
            and "*" not in resource
            and isinstance(sc.services, dict)
            and resource not in sc.services
        ):
            errors.append(f"rules[{i}].resource: unknown service {resource!r}")

    # role -> slice map
    for role in sorted(sc.role_slice_map if isinstance(sc.role_slice_map, dict) else {}):
        slice_id = sc.role_slice_map[role]
        missing = [d for d in sorted(all_slices) if slice_id not in all_slices[d]]
        if missing:
            errors.append(
                f"role_slice_map.{role}: slice {slice_id!r} missing in domains {missing}"
            )

    # subscribers
    imsis: set[str] = set()
    for i, sub in enumerate(sc.subscribers if isinstance(sc.subscribers, list) else []):
        where = f"subscribers[{i}]"
        if not isinstance(sub, dict):
            errors.append(f"{where}: must be an object")
            continue
        imsi = sub.get("imsi")
        if not isinstance(imsi, str) or len(imsi) != 15 or not imsi.isdigit():
            errors.append(f"{where}.imsi: must be 15 decimal digits")
        elif imsi in imsis:
            errors.append(f"{where}.imsi: duplicate imsi {imsi}")
        else:
            imsis.add(imsi)
        if sub.get("home_domain") not in domains:
            errors.append(f"{where}.home_domain: unknown domain {sub.get('home_domain')!r}")
        profiles = sub.get("sim_profiles")
        if not isinstance(profiles, list) or not profiles:
            errors.append(f"{where}.sim_profiles: must be a non-empty list")
        else:
            for p in profiles:
                if p not in domains:
                    errors.append(f"{where}.sim_profiles: unknown domain {p!r}")
        roles = sub.get("roles")
        if not isinstance(roles, list) or not all(isinstance(r, str) and r for r in roles):
            errors.append(f"{where}.roles: must be a list of role names")
        posture = sub.get("posture", 0)
        if not isinstance(posture, int) or not 0 <= posture <= 3:
            errors.append(f"{where}.posture: must be an integer in 0..3")
        if not isinstance(sub.get("device_type"), str) or not sub.get("device_type"):
            errors.append(f"{where}.device_type: must be a non-empty string")

    # iot: devices, bridge maps, hvac
    device_ids: set[str] = set()
    device_ias: set[str] = set()
    iot = sc.iot if isinstance(sc.iot, dict) else {}
    out_gas: set[str] = set()
    in_gas: set[str] = set()

    def check_device(entry: dict, where: str) -> None:
        device_id = entry.get("device_id")
        if not isinstance(device_id, str) or not device_id:
            errors.append(f"{where}.device_id: must be a non-empty string")
        elif device_id in device_ids:
            errors.append(f"{where}.device_id: duplicate device id {device_id!r}")
        else:
            device_ids.add(device_id)
        ia = entry.get("ia")
        if not isinstance(ia, str):
            errors.append(f"{where}.ia: must be a string")
        else:
            try:
                IndividualAddress.parse(ia)
            except OutOfRange as exc:
                errors.append(f"{where}.ia: {exc}")
            if ia in device_ias:
                errors.append(f"{where}.ia: duplicate individual address {ia!r}")
            device_ias.add(ia)
        hops = entry.get("hops", 1)
        if not isinstance(hops, int) or hops < 1:
            errors.append(f"{where}.hops: must be an integer >= 1")
        for j, link in enumerate(entry.get("links", [])):
            lw = f"{where}.links[{j}]"
            if not isinstance(link, dict):
                errors.append(f"{lw}: must be an object")
                continue
            _check_ga(errors, f"{lw}.ga", link.get("ga"))
            if link.get("dpt") not in known_dpts():
                errors.append(f"{lw}.dpt: unknown datapoint type {link.get('dpt')!r}")
            if link.get("direction") not in ("in", "out"):
                errors.append(f"{lw}.direction: must be 'in' or 'out'")
            if not isinstance(link.get("object"), str) or not link.get("object"):
                errors.append(f"{lw}.object: must be a non-empty string")
            if isinstance(link.get("ga"), str):
                (out_gas if link.get("direction") == "out" else in_gas).add(link["ga"])

    hub = iot.get("hub")
    if isinstance(hub, dict):
        check_device({**hub, "links": hub.get("links", [])}, "iot.hub")
    elif iot:
        errors.append("iot.hub: required when an iot section is present")
    for i, entry in enumerate(iot.get("devices", [])):
        if not isinstance(entry, dict):
            errors.append(f"iot.devices[{i}]: must be an object")
            continue
        check_device(entry, f"iot.devices[{i}]")
    # Devices commissioned mid-run count toward group-address coverage too.
    for i, step in enumerate(sc.timeline if isinstance(sc.timeline, list) else []):
        if (
            isinstance(step, dict)
            and step.get("action") == "commission"
            and isinstance(step.get("device"), dict)
        ):
            check_device(step["device"], f"timeline[{i}].device")
    bridge = iot.get("bridge", {})
    for i, m in enumerate(bridge.get("telemetry", []) if isinstance(bridge, dict) else []):
        where = f"iot.bridge.telemetry[{i}]"
        _check_ga(errors, f"{where}.ga", m.get("ga"))
        if m.get("dpt") not in known_dpts():
            errors.append(f"{where}.dpt: unknown datapoint type {m.get('dpt')!r}")
        try:
            validate_topic(m.get("topic", ""))
        except BadFilter as exc:
            errors.append(f"{where}.topic: {exc}")
        if isinstance(m.get("ga"), str) and m["ga"] not in out_gas:
            errors.append(f"{where}.ga: no device transmits on {m['ga']!r}")
    for i, m in enumerate(bridge.get("commands", []) if isinstance(bridge, dict) else []):
        where = f"iot.bridge.commands[{i}]"
        _check_ga(errors, f"{where}.ga", m.get("ga"))
        if m.get("dpt") not in known_dpts():
            errors.append(f"{where}.dpt: unknown datapoint type {m.get('dpt')!r}")
        try:
            validate_topic(m.get("topic", ""))
        except BadFilter as exc:
            errors.append(f"{where}.topic: {exc}")
        if isinstance(m.get("ga"), str) and m["ga"] not in in_gas:
            errors.append(f"{where}.ga: no device listens on {m['ga']!r}")
    hvac = iot.get("hvac")
    if isinstance(hvac, dict):
        for key in ("sample_topic", "command_topic"):
            try:
                validate_topic(hvac.get(key, ""))
            except BadFilter as exc:
                errors.append(f"iot.hvac.{key}: {exc}")
        for key in ("raise_above", "lower_below"):
            value = hvac.get(key)
            if value is not None and not isinstance(value, (int, float)):
                errors.append(f"iot.hvac.{key}: must be a number")

    # timeline
    last_at = None
    for i, step in enumerate(sc.timeline if isinstance(sc.timeline, list) else []):
        where = f"timeline[{i}]"
        if not isinstance(step, dict):
            errors.append(f"{where}: must be an object")
            continue
        at = step.get("at")
        if not isinstance(at, int) or at < 0:
            errors.append(f"{where}.at: must be a non-negative integer")
        else:
            if last_at is not None and at < last_at:
                errors.append(f"{where}.at: timeline must be sorted by time")
            last_at = at
            if isinstance(sc.horizon_ms, int) and at > sc.horizon_ms:
                errors.append(f"{where}.at: beyond horizon_ms ({sc.horizon_ms})")
        action = step.get("action")
        if action not in TIMELINE_ACTIONS:
            errors.append(f"{where}.action: unknown action {action!r}")
            continue
        errors.extend(f"{where}.{e}" for e in _validate_action(step, sc, domains, imsis, device_ids))

    # expectations
    for i, exp in enumerate(sc.expectations if isinstance(sc.expectations, list) else []):
        where = f"expectations[{i}]"
        if not isinstance(exp, dict):
            errors.append(f"{where}: must be an object")
            continue
        if not isinstance(exp.get("name"), str) or not exp.get("name"):
            errors.append(f"{where}.name: must be a non-empty string")
        etype = exp.get("type")
        if etype not in EXPECTATION_TYPES:
            errors.append(f"{where}.type: unknown type {etype!r}")
            continue
        if etype in ("event_exists", "event_absent", "event_count"):
            if not isinstance(exp.get("event"), str) or not exp.get("event"):
                errors.append(f"{where}.event: must be a non-empty string")
            if etype == "event_count" and not any(
                isinstance(exp.get(k), int) for k in ("equals", "min", "max")
            ):
                errors.append(f"{where}: event_count needs equals, min or max")
        if etype == "ordering":
            for key in ("first", "then"):
                if not isinstance(exp.get(key), dict) or not exp[key].get("event"):
                    errors.append(f"{where}.{key}: must be a matcher with an event")
        if etype == "latency_bound":
            for key in ("from", "to"):
                if not isinstance(exp.get(key), dict) or not exp[key].get("event"):
                    errors.append(f"{where}.{key}: must be a matcher with an event")
            if not isinstance(exp.get("max_ms"), int):
                errors.append(f"{where}.max_ms: must be an integer")

    # access matrix
    matrix = sc.access_matrix.get("roles", {}) if isinstance(sc.access_matrix, dict) else {}
    columns = set(sc.services if isinstance(sc.services, dict) else {}) | {"internet"}
    for role in sorted(matrix):
        row = matrix[role]
        if not isinstance(row, dict):
            errors.append(f"access_matrix.roles.{role}: must be an object")
            continue
        for col in sorted(row):
            if col not in columns:
                errors.append(f"access_matrix.roles.{role}.{col}: unknown column")
            elif row[col] not in ("permit", "deny"):
                errors.append(f"access_matrix.roles.{role}.{col}: must be permit or deny")
    return errors


def _validate_action(step: dict, sc: Scenario, domains: dict, imsis: set, device_ids: set) -> list[str]:
    errors: list[str] = []
    action = step["action"]

    def need(*keys: str) -> None:
        for key in keys:
            if key not in step:
                errors.append(f"{key}: required for {action}")

    def check_imsi(key: str = "imsi") -> None:
        if key in step and step[key] not in imsis:
            errors.append(f"{key}: unknown subscriber {step[key]!r}")

    def check_domain(key: str = "domain") -> None:
        if key in step and step[key] not in domains:
            errors.append(f"{key}: unknown domain {step[key]!r}")

    if action == "attach":
        need("imsi", "domain")
        check_imsi()
        check_domain()
    elif action == "detach":
        need("imsi", "domain")
        check_imsi()
        check_domain()
    elif action == "roam":
        need("imsi", "to_domain")
        check_imsi()
        check_domain("to_domain")
    elif action == "flow_query":
        need("domain")
        check_domain()
        if "src" not in step and "src_imsi" not in step:
            errors.append("src or src_imsi: required for flow_query")
        check_imsi("src_imsi")
        if "dst" not in step and "dst_service" not in step:
            errors.append("dst or dst_service: required for flow_query")
        if "dst_service" in step and step["dst_service"] not in sc.services:
            errors.append(f"dst_service: unknown service {step['dst_service']!r}")
        if "dst" in step:
            try:
                ipaddress.ip_address(step["dst"])
            except ValueError:
                errors.append(f"dst: invalid IP {step['dst']!r}")
    elif action == "sample":
        need("device_id", "object", "value")
        if step.get("device_id") not in device_ids:
            errors.append(f"device_id: unknown device {step.get('device_id')!r}")
    elif action == "publish":
        need("topic", "payload")
        try:
            validate_topic(step.get("topic", ""))
        except BadFilter as exc:
            errors.append(f"topic: {exc}")
    elif action == "group_read":
        need("ga")
        if "ga" in step:
            try:
                GroupAddress.parse(step["ga"])
            except OutOfRange as exc:
                errors.append(f"ga: {exc}")
    elif action == "policy":
        need("op", "actor")
        if step.get("op") not in ("replace", "add_rule", "remove_rule"):
            errors.append(f"op: unknown mutation {step.get('op')!r}")
    elif action == "fault":
        if step.get("fault") == "drop_pushes":
            need("domain", "count")
            check_domain()
        elif step.get("fault") == "unreachable":
            need("domain", "until_ms")
            check_domain()
        else:
            errors.append(f"fault: unknown fault {step.get('fault')!r}")
    elif action == "onboarding_decision":
        need("imsi", "domain", "approve", "actor")
        check_imsi()
        check_domain()
    elif action == "commission":
        need("imsi", "domain", "device")
        check_imsi()
        check_domain()
        if not isinstance(step.get("device"), dict):
            errors.append("device: must be a commissioning record object")
    return errors
