"""World assembly and scenario execution.

``World`` wires every component from a validated scenario: one core,
gateway and enforcement router per domain, the federation controller,
the field bus with its commissioned devices, the pub/sub broker, the
bridge and the ventilation loop.  The timeline is scheduled up front;
running the world is then a single deterministic pass of the event
kernel, after which expectations are checked against the event log.

Timeline actions that fail raise inside the virtual timestep; the
harness turns them into ``action_error`` records instead of aborting,
so a scenario can deliberately exercise error paths.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .core5g import Core5G, IdAllocator, NoActiveSession, Slice, Subscriber
from .errors import SimError
from .fedsdn import Controller, UnknownOnboarding
from .gateway.policy import INTERNET_RESOURCE, ServiceEndpoint, permitted_pairs, validate_rules
from .gateway.service import Gateway
from .iot.hub import AlarmWatcher, Bridge, CommandMap, HvacController, TelemetryMap
from .iot.knx import BadLink, CommissioningRecord, GroupAddress, IndividualAddress, Link, TelegramBus
from .iot.pubsub import Broker
from .kernel import Kernel, SimEvent
from .pep import FlowQuery, PepRouter
from .scenario import Scenario, ValidationError, validate


@dataclass
class ExpectationResult:
    name: str
    ok: bool
    detail: str


@dataclass
class RunReport:
    scenario: str
    seed: int
    passed: bool
    expectations: list[ExpectationResult]
    metrics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "passed": self.passed,
            "expectations": [
                {"name": e.name, "ok": e.ok, "detail": e.detail} for e in self.expectations
            ],
            "metrics": self.metrics,
        }


def _record_matches(record: dict, matcher: dict) -> bool:
    if "component" in matcher and record["component"] != matcher["component"]:
        return False
    if record["event"] != matcher["event"]:
        return False
    for key, value in matcher.get("fields", {}).items():
        if record["fields"].get(key) != value:
            return False
    if "after" in matcher and record["ts"] < matcher["after"]:
        return False
    if "before" in matcher and record["ts"] > matcher["before"]:
        return False
    return True


def _first_match(records: list[dict], matcher: dict, start: int = 0) -> int | None:
    for i in range(start, len(records)):
        if _record_matches(records[i], matcher):
            return i
    return None


def evaluate_expectations(records: list[dict], expectations: list[dict]) -> list[ExpectationResult]:
    """Check every declared expectation; failures cite exact log positions."""
    results = []
    for exp in expectations:
        name = exp.get("name", exp.get("type", "unnamed"))
        etype = exp["type"]
        if etype == "event_exists":
            idx = _first_match(records, exp)
            ok = idx is not None
            detail = (
                f"matched log[{idx}] at t={records[idx]['ts']}ms" if ok else "no matching record"
            )
        elif etype == "event_absent":
            idx = _first_match(records, exp)
            ok = idx is None
            detail = (
                "no matching record"
                if ok
                else f"unexpected log[{idx}] at t={records[idx]['ts']}ms"
            )
        elif etype == "event_count":
            count = sum(1 for r in records if _record_matches(r, exp))
            ok = True
            parts = []
            if "equals" in exp:
                ok = ok and count == exp["equals"]
                parts.append(f"equals {exp['equals']}")
            if "min" in exp:
                ok = ok and count >= exp["min"]
                parts.append(f"min {exp['min']}")
            if "max" in exp:
                ok = ok and count <= exp["max"]
                parts.append(f"max {exp['max']}")
            detail = f"count={count} ({', '.join(parts)})"
        elif etype == "ordering":
            first = _first_match(records, exp["first"])
            if first is None:
                results.append(ExpectationResult(name, False, "no record for 'first'"))
                continue
            then = _first_match(records, exp["then"])
            if then is None:
                results.append(ExpectationResult(name, False, "no record for 'then'"))
                continue
            ok = first < then
            detail = f"log[{first}] (t={records[first]['ts']}ms) vs log[{then}] (t={records[then]['ts']}ms)"
        elif etype == "latency_bound":
            src = _first_match(records, exp["from"])
            if src is None:
                results.append(ExpectationResult(name, False, "no record for 'from'"))
                continue
            dst = _first_match(records, exp["to"], start=src)
            if dst is None:
                results.append(ExpectationResult(name, False, "no record for 'to' after 'from'"))
                continue
            delta = records[dst]["ts"] - records[src]["ts"]
            lo = exp.get("min_ms", 0)
            hi = exp["max_ms"]
            ok = lo <= delta <= hi
            detail = f"latency {delta}ms (bounds {lo}..{hi}ms, log[{src}] -> log[{dst}])"
        else:
            ok = False
            detail = f"unknown expectation type {etype!r}"
        results.append(ExpectationResult(name, ok, detail))
    return results


def _device_record(entry: dict) -> CommissioningRecord:
    links = tuple(
        Link(
            object=link["object"],
            ga=GroupAddress.parse(link["ga"]),
            dpt=link["dpt"],
            direction=link["direction"],
        )
        for link in entry.get("links", [])
    )
    parameters = {k: v for k, v in entry.items() if k not in ("device_id", "ia", "links")}
    return CommissioningRecord(
        device_id=entry["device_id"],
        ia=IndividualAddress.parse(entry["ia"]),
        links=links,
        parameters=parameters,
    )


class World:
    """Everything one scenario run needs, fully wired and deterministic."""

    def __init__(self, scenario: Scenario, seed: int | None = None):
        problems = validate(scenario)
        if problems:
            raise ValidationError(problems)
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.kernel = Kernel(seed=self.seed)
        self.kernel.log(
            "harness",
            "run_started",
            scenario=scenario.name,
            seed=self.seed,
            horizon_ms=scenario.horizon_ms,
        )

        fed = scenario.federation
        fed_key = bytes.fromhex(fed["key"]) if fed.get("key") else None
        session_ids = IdAllocator()
        self.cores: dict[str, Core5G] = {}
        self.gateways: dict[str, Gateway] = {}
        self.peps: dict[str, PepRouter] = {}
        for name in sorted(scenario.domains):
            dom = scenario.domains[name]
            slices = {
                sid: Slice(slice_id=sid, qos_class=s["qos_class"], isolation_tag=s["isolation_tag"])
                for sid, s in dom["slices"].items()
            }
            core = Core5G(self.kernel, name, dom["pool"], slices, session_ids)
            gateway = Gateway(
                self.kernel,
                name,
                core,
                key=bytes.fromhex(dom["gateway_key"]),
                federation_key=fed_key,
                assertion_ttl_ms=fed.get("assertion_ttl_ms", 600_000),
                controller_id="fed-sdn",
            )
            self.cores[name] = core
            self.gateways[name] = gateway
            self.peps[name] = PepRouter(self.kernel, name)
        for a in sorted(self.gateways):
            for b in sorted(self.gateways):
                if a != b:
                    self.gateways[a].set_peer(b, self.gateways[b])

        for sub in scenario.subscribers:
            record = Subscriber(
                imsi=sub["imsi"],
                home_domain=sub["home_domain"],
                sim_profiles=list(sub["sim_profiles"]),
                roles=frozenset(sub["roles"]),
                device_type=sub["device_type"],
                posture=sub.get("posture", 0),
                subscription_active=sub.get("subscription_active", True),
            )
            for domain in record.sim_profiles:
                self.cores[domain].register_subscriber(record)

        knobs = scenario.controller
        self.controller = Controller(
            self.kernel,
            retry_ms=knobs.get("retry_ms", 500),
            max_retries=knobs.get("max_retries", 10),
            reconcile_interval_ms=knobs.get("reconcile_interval_ms", 1000),
        )
        self.catalog = {
            name: ServiceEndpoint(
                name=name, ip=svc["ip"], port=svc["port"], slice_id=svc.get("slice_id", "")
            )
            for name, svc in scenario.services.items()
        }
        for name in sorted(self.gateways):
            self.controller.register_domain(name, self.gateways[name], self.peps[name])
        self.controller.set_static_config(scenario.role_slice_map, self.catalog)

        iot = scenario.iot
        self.bus = TelegramBus(self.kernel, hop_ms=iot.get("bus_hop_ms", 5))
        self.broker = Broker(
            self.kernel, hop_ms=iot.get("bus_hop_ms", 5), hops=iot.get("pubsub_hops", 1)
        )
        self.bridge = None
        self.hvac = None
        if iot.get("hub"):
            hub_entry = iot["hub"]
            self.bus.commission(_device_record(hub_entry))
            for entry in iot.get("devices", []):
                self.bus.commission(_device_record(entry))
            bridge_cfg = iot.get("bridge", {})
            telemetry = [
                TelemetryMap(ga=GroupAddress.parse(m["ga"]), topic=m["topic"], dpt=m["dpt"])
                for m in bridge_cfg.get("telemetry", [])
            ]
            commands = [
                CommandMap(topic=m["topic"], ga=GroupAddress.parse(m["ga"]), dpt=m["dpt"])
                for m in bridge_cfg.get("commands", [])
            ]
            self.bridge = Bridge(
                self.kernel, self.bus, self.broker, hub_entry["ia"], telemetry, commands
            )
            hvac_cfg = iot.get("hvac")
            if hvac_cfg:
                self.hvac = HvacController(
                    self.kernel,
                    self.broker,
                    sample_topic=hvac_cfg["sample_topic"],
                    command_topic=hvac_cfg["command_topic"],
                    raise_above=hvac_cfg.get("raise_above", 1000.0),
                    lower_below=hvac_cfg.get("lower_below", 800.0),
                    max_level=hvac_cfg.get("max_level", 2),
                )
        self.alarms = AlarmWatcher(
            self.kernel, {svc.ip: name for name, svc in self.catalog.items()}
        )

        # The initial rule load is a normal audited mutation: version becomes 1
        # and the first enforcement programs go out before any timeline action.
        self.controller.update_policies(
            {"op": "replace", "rules": scenario.rules}, actor="scenario-load"
        )
        self.controller.start_reconcile(scenario.horizon_ms)

        self.kernel.register("harness", self._on_event)
        for index, step in enumerate(scenario.timeline):
            self.kernel.schedule(step["at"], "harness", "action", {"index": index})

    # -- timeline execution ---------------------------------------------------

    def _on_event(self, ev: SimEvent) -> None:
        step = self.scenario.timeline[ev.payload["index"]]
        try:
            self._execute(step)
        except SimError as exc:
            self.kernel.log(
                "harness",
                "action_error",
                action=step["action"],
                error=type(exc).__name__,
                detail=str(exc),
            )

    def _execute(self, step: dict) -> None:
        action = step["action"]
        if action == "attach":
            self.cores[step["domain"]].attach(step["imsi"], vpn=step.get("vpn", False))
        elif action == "detach":
            core = self.cores[step["domain"]]
            session = core.active_session(step["imsi"])
            if session is None:
                raise NoActiveSession(
                    f"imsi {step['imsi']} has no active session in {step['domain']}"
                )
            core.release_session(session.session_id, reason=step.get("reason", "detach"))
            self.gateways[step["domain"]].notify_session_changed()
        elif action == "roam":
            self.controller.trigger_roam(step["imsi"], step["to_domain"])
        elif action == "flow_query":
            self._flow_query(step)
        elif action == "sample":
            device = self.bus.devices_by_id.get(step["device_id"])
            if device is None:
                raise BadLink(f"unknown device {step['device_id']!r}")
            device.transmit(step["object"], step["value"])
        elif action == "publish":
            self.broker.publish(
                step["topic"],
                str(step["payload"]).encode("utf-8"),
                retained=step.get("retained", False),
                origin="user",
            )
        elif action == "group_read":
            self.bus.group_read(GroupAddress.parse(step["ga"]))
        elif action == "policy":
            mutation = {
                k: v for k, v in step.items() if k in ("op", "rule", "rule_id", "rules")
            }
            self.controller.update_policies(mutation, actor=step["actor"])
        elif action == "fault":
            if step["fault"] == "drop_pushes":
                self.controller.drop_next_pushes(step["domain"], step["count"])
            else:
                self.controller.set_unreachable(step["domain"], step["until_ms"])
            self.kernel.log(
                "harness",
                "fault_injected",
                fault=step["fault"],
                domain=step["domain"],
            )
        elif action == "onboarding_decision":
            self._onboarding_decision(step)
        elif action == "commission":
            self._commission(step)
        else:
            raise SimError(f"unknown action {action!r}")

    def _flow_query(self, step: dict) -> None:
        domain = step["domain"]
        if "src" in step:
            src = step["src"]
        else:
            session = self.cores[domain].active_session(step["src_imsi"])
            if session is None:
                raise NoActiveSession(
                    f"imsi {step['src_imsi']} has no active session in {domain}"
                )
            src = session.ip
        if "dst_service" in step:
            svc = self.catalog[step["dst_service"]]
            dst, dst_port = svc.ip, svc.port
        else:
            dst = step["dst"]
            dst_port = step.get("dst_port", 0)
        dst_port = step.get("dst_port", dst_port)
        proto = step.get("proto", "tcp")
        query = FlowQuery(src=src, dst=dst, dst_port=dst_port, proto=proto)
        decision = self.peps[domain].evaluate_flow(query)
        self.kernel.log(
            "harness",
            "flow_decision",
            domain=domain,
            src=src,
            dst=dst,
            dst_port=dst_port,
            proto=proto,
            action=decision.action,
            matched=str(decision.matched),
            egress=decision.egress,
        )
        self.alarms.observe_flow(domain, src, dst, decision.action)

    def _onboarding_decision(self, step: dict) -> None:
        for session_id in sorted(self.controller.onboarding):
            item = self.controller.onboarding[session_id]
            if item["imsi"] == step["imsi"] and item["domain"] == step["domain"]:
                if step["approve"]:
                    self.controller.approve_onboarding(session_id, step["actor"])
                else:
                    self.controller.deny_onboarding(session_id, step["actor"])
                return
        raise UnknownOnboarding(
            f"no onboarding item for imsi {step['imsi']} in {step['domain']}"
        )

    def _commission(self, step: dict) -> None:
        domain = step["domain"]
        imsi = step["imsi"]
        device = step["device"]
        session = self.cores[domain].active_session(imsi)
        if session is None:
            self.kernel.log(
                "harness",
                "commission_denied",
                imsi=imsi,
                device_id=device.get("device_id", ""),
                reason="no_session",
            )
            return
        hub_service = self.scenario.iot.get("hub_service", "iot-hub")
        grants = self.gateways[domain].grants_for(session.session_id)
        if ("manage", hub_service) not in grants:
            self.kernel.log(
                "harness",
                "commission_denied",
                imsi=imsi,
                device_id=device.get("device_id", ""),
                reason="not_authorized",
            )
            return
        self.bus.commission(_device_record(device))
        self.kernel.log(
            "harness",
            "commission_granted",
            imsi=imsi,
            device_id=device["device_id"],
            session_id=session.session_id,
        )

    # -- run and report -----------------------------------------------------------

    def run(self) -> RunReport:
        self.kernel.run_until(self.scenario.horizon_ms)
        results = evaluate_expectations(self.kernel.records, self.scenario.expectations)
        if self.scenario.access_matrix.get("roles"):
            results.append(self.check_access_matrix())
        active = sum(len(core.live_sessions()) for core in self.cores.values())
        report = RunReport(
            scenario=self.scenario.name,
            seed=self.seed,
            passed=all(r.ok for r in results),
            expectations=results,
            metrics={
                "events": len(self.kernel.records),
                "final_clock_ms": self.kernel.clock,
                "active_sessions": active,
                "policy_version": self.controller.policyset.version,
                "security_alarms": self.alarms.count,
                "vent_level": self.hvac.level if self.hvac else None,
            },
        )
        return report

    def decision_matrix(self, via_vpn: bool = False) -> dict[str, dict[str, str]]:
        """Role rows over service columns plus internet, from the declared rules.

        Each role is represented by its lexicographically first subscriber;
        the matrix reflects the scenario's as-authored rule set, not any
        runtime mutations, so it can be compared against the designed table.
        """
        rules = validate_rules(self.scenario.rules)
        by_role: dict[str, dict] = {}
        for sub in sorted(self.scenario.subscribers, key=lambda s: s["imsi"]):
            for role in sub["roles"]:
                by_role.setdefault(role, sub)
        matrix: dict[str, dict[str, str]] = {}
        for role in sorted(by_role):
            sub = by_role[role]
            ctx = self.cores[sub["home_domain"]].query_subscriber_context(sub["imsi"])
            pairs = permitted_pairs(ctx, rules, self.catalog, via_vpn=via_vpn)
            row = {
                name: ("permit" if ("access", name) in pairs else "deny")
                for name in sorted(self.catalog)
            }
            row["internet"] = (
                "permit" if ("internet", INTERNET_RESOURCE) in pairs else "deny"
            )
            matrix[role] = row
        return matrix

    def check_access_matrix(self) -> ExpectationResult:
        declared = self.scenario.access_matrix["roles"]
        computed = self.decision_matrix()
        mismatches = []
        for role in sorted(declared):
            if role not in computed:
                mismatches.append(f"{role}: no subscriber holds this role")
                continue
            for column in sorted(declared[role]):
                want = declared[role][column]
                got = computed[role].get(column)
                if want != got:
                    mismatches.append(f"{role}/{column}: declared {want}, computed {got}")
        if mismatches:
            return ExpectationResult("access_matrix", False, "; ".join(mismatches))
        return ExpectationResult(
            "access_matrix", True, f"{len(declared)} role rows match the designed table"
        )


def run_scenario(scenario: Scenario, seed: int | None = None) -> tuple[World, RunReport]:
    world = World(scenario, seed=seed)
    report = world.run()
    return world, report


def write_log(world: World, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(world.kernel.to_jsonl())


def write_report(report: RunReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
