"""Federation controller: canonical policy, compilation, push/retry, reconcile."""

import pytest

from fednet.core5g import AlreadyAttached, Core5G, IdAllocator, NoActiveSession, Slice, Subscriber
from fednet.fedsdn import (
    CanonicalPolicySet,
    Controller,
    DomainUnreachable,
    SessionEntry,
    SessionView,
    UnknownOnboarding,
    compile_program,
)
from fednet.gateway.policy import MalformedPolicy, ServiceEndpoint, validate_rules
from fednet.gateway.service import Gateway
from fednet.kernel import Kernel
from fednet.pep import PepRouter

IMSI = "001010000000001"
IOT_IMSI = "001010000000003"

CATALOG = {
    "home-assistant": ServiceEndpoint("home-assistant", "10.60.0.10", 8123, "iot"),
    "mqtt-broker": ServiceEndpoint("mqtt-broker", "10.60.0.20", 1883, "iot"),
    "customer-portal": ServiceEndpoint("customer-portal", "10.60.0.30", 443, "cust"),
}

ROLE_SLICE = {"customer": "cust", "iot-op": "iot"}

RAW_RULES = [
    {"rule_id": "attach-any", "priority": 100, "subject": {}, "action": "attach", "resource": "*", "effect": "permit", "scope": "any"},
    {"rule_id": "portal-any", "priority": 20, "subject": {}, "action": "access", "resource": "customer-portal", "effect": "permit", "scope": "any"},
    {"rule_id": "net-users", "priority": 30, "subject": {"roles": ["customer"]}, "action": "internet", "resource": "internet", "effect": "permit", "scope": "any"},
]


def make_policyset(raw=None, version=1):
    raw = RAW_RULES if raw is None else raw
    return CanonicalPolicySet(
        version=version,
        raw_rules=tuple(dict(r) for r in raw),
        rules=tuple(validate_rules(raw)),
        role_slice_map=dict(ROLE_SLICE),
        catalog=dict(CATALOG),
    )


def entry(session_id, ip, permitted, domain="priv", state="active", imsi=IMSI):
    return SessionEntry(
        session_id=session_id,
        imsi=imsi,
        domain=domain,
        ip=ip,
        slice_id="cust",
        state=state,
        service_session_id=1,
        permitted=frozenset(permitted),
        vpn=False,
    )


class TestCompile:
    def test_empty_view_compiles_to_static_service_routes(self):
        program = compile_program("priv", SessionView(entries=(), as_of=0), make_policyset())
        assert [(r.prefix, r.next_hop) for r in program.routes] == [
            ("10.60.0.10/32", "svc:home-assistant"),
            ("10.60.0.20/32", "svc:mqtt-broker"),
            ("10.60.0.30/32", "svc:customer-portal"),
        ]
        assert program.acls == ()

    def test_session_blocks_are_rebased_in_numeric_ip_order(self):
        view = SessionView(
            entries=(
                entry(1, "10.42.0.10", {("access", "customer-portal")}),
                entry(2, "10.42.0.9", {("access", "mqtt-broker")}),
            ),
            as_of=0,
        )
        program = compile_program("priv", view, make_policyset())
        # .9 sorts before .10 numerically (a string sort would reverse them).
        assert [(a.priority, a.src, a.action) for a in program.acls] == [
            (1000, "10.42.0.9/32", "permit"),
            (1001, "10.42.0.9/32", "deny"),
            (1100, "10.42.0.10/32", "permit"),
            (1101, "10.42.0.10/32", "deny"),
        ]

    def test_shared_destinations_are_deduplicated(self):
        view = SessionView(
            entries=(
                entry(1, "10.42.0.2", {("access", "customer-portal")}),
                entry(2, "10.42.0.3", {("access", "customer-portal")}),
            ),
            as_of=0,
        )
        program = compile_program("priv", view, make_policyset())
        portal_routes = [r for r in program.routes if r.next_hop == "svc:customer-portal"]
        assert len(portal_routes) == 1
        assert len(program.acls) == 4  # two blocks of permit+deny-all

    def test_internet_default_route_sorts_last(self):
        view = SessionView(entries=(entry(1, "10.42.0.2", {("internet", "internet")}),), as_of=0)
        program = compile_program("priv", view, make_policyset())
        assert program.routes[-1].prefix == "0.0.0.0/0"
        assert program.routes[-1].next_hop == "red-side"

    def test_foreign_and_inactive_sessions_are_ignored(self):
        view = SessionView(
            entries=(
                entry(1, "10.99.0.2", {("access", "customer-portal")}, domain="pub"),
                entry(2, "10.42.0.2", {("access", "customer-portal")}, state="released"),
            ),
            as_of=0,
        )
        program = compile_program("priv", view, make_policyset())
        assert program.acls == ()

    def test_render_is_stable_and_newline_terminated(self):
        program = compile_program("priv", SessionView(entries=(), as_of=0), make_policyset())
        text = program.render()
        assert text.endswith("\n")
        assert text == program.render()
        empty = compile_program(
            "priv", SessionView(entries=(), as_of=0), CanonicalPolicySet(1, (), ())
        )
        assert empty.render() == ""


class Net:
    """Two federated domains wired to one controller."""

    def __init__(self, seed=3, **controller_kw):
        self.kernel = Kernel(seed=seed)
        ids = IdAllocator()
        self.cores = {}
        self.gateways = {}
        self.peps = {}
        self.controller = Controller(self.kernel, **controller_kw)
        for name, pool in (("priv", "10.42.0.0/24"), ("pub", "10.99.0.0/24")):
            slices = {
                "cust": Slice("cust", "best-effort", "t1"),
                "iot": Slice("iot", "low-latency", "t2"),
            }
            core = Core5G(self.kernel, name, pool, slices, ids)
            gateway = Gateway(
                self.kernel, name, core,
                key=name.encode() * 8,
                federation_key=b"\xcc" * 32,
                controller_id="fed-sdn",
            )
            self.cores[name] = core
            self.gateways[name] = gateway
            self.peps[name] = PepRouter(kernel=self.kernel, domain=name)
            self.controller.register_domain(name, gateway, self.peps[name])
        self.gateways["priv"].set_peer("pub", self.gateways["pub"])
        self.gateways["pub"].set_peer("priv", self.gateways["priv"])
        self.controller.set_static_config(ROLE_SLICE, CATALOG)

    def subscribe(self, imsi=IMSI, profiles=("priv",), roles=("customer",), device_type="ue"):
        for domain in profiles:
            self.cores[domain].register_subscriber(
                Subscriber(
                    imsi=imsi,
                    home_domain=profiles[0],
                    sim_profiles=list(profiles),
                    roles=frozenset(roles),
                    device_type=device_type,
                    posture=1,
                )
            )

    def events(self, name):
        return [r for r in self.kernel.records if r["event"] == name]


class TestPolicyMutations:
    def test_replace_bumps_version_and_pushes_everywhere(self):
        net = Net()
        version = net.controller.update_policies({"op": "replace", "rules": RAW_RULES}, actor="op")
        assert version == 1
        net.kernel.run_until(0)
        assert net.peps["priv"].version == 1
        assert net.peps["pub"].version == 1
        assert net.gateways["priv"].policy_version == 1
        assert [r["fields"]["domain"] for r in net.events("push_acked")] == ["priv", "pub"]
        assert net.controller.audit == [{"version": 1, "actor": "op", "op": "replace", "at": 0}]

    def test_add_and_remove_rule(self):
        net = Net()
        net.controller.update_policies({"op": "replace", "rules": RAW_RULES}, actor="op")
        extra = {"rule_id": "blocker", "priority": 1, "subject": {}, "action": "access",
                 "resource": "customer-portal", "effect": "deny", "scope": "any"}
        assert net.controller.update_policies({"op": "add_rule", "rule": extra}, actor="op") == 2
        assert net.controller.update_policies({"op": "remove_rule", "rule_id": "blocker"}, actor="op") == 3
        assert [r.rule_id for r in net.controller.policyset.rules] == [
            "attach-any", "portal-any", "net-users",
        ]

    @pytest.mark.parametrize(
        "mutation",
        [
            {"op": "resync"},
            {"op": "replace"},
            {"op": "replace", "rules": "all"},
            {"op": "add_rule"},
            {"op": "add_rule", "rule": {"rule_id": "x"}},
            {"op": "remove_rule", "rule_id": "ghost"},
            {"op": "replace", "rules": [{"rule_id": "dup", "priority": 1, "action": "attach",
                                         "resource": "*", "effect": "permit"}] * 2},
        ],
    )
    def test_bad_mutations_leave_state_untouched(self, mutation):
        net = Net()
        net.controller.update_policies({"op": "replace", "rules": RAW_RULES}, actor="op")
        net.kernel.run_until(0)
        before = len(net.events("push_scheduled"))
        with pytest.raises(MalformedPolicy):
            net.controller.update_policies(mutation, actor="op")
        assert net.controller.policyset.version == 1
        assert net.controller.policyset.raw_rules == tuple(RAW_RULES)
        assert len(net.events("push_scheduled")) == before
        assert len(net.controller.audit) == 1


class TestPushLifecycle:
    def test_clean_push_acks_immediately_and_ignores_the_stale_check(self):
        net = Net()
        net.controller.update_policies({"op": "replace", "rules": RAW_RULES}, actor="op")
        net.kernel.run_until(1000)
        assert len(net.events("push_acked")) == 2
        assert net.events("push_retry") == []
        assert net.events("sync_alarm") == []

    def test_unknown_domain_push_is_rejected(self):
        net = Net()
        with pytest.raises(DomainUnreachable):
            net.controller.push_program("ghost")

    def test_dropped_pushes_retry_on_the_backoff(self):
        net = Net()
        net.controller.update_policies({"op": "replace", "rules": RAW_RULES}, actor="op")
        net.kernel.run_until(0)
        net.controller.drop_next_pushes("pub", 2)
        net.controller.update_policies({"op": "remove_rule", "rule_id": "net-users"}, actor="op")
        net.kernel.run_until(5000)

        dropped = [r for r in net.events("push_dropped") if r["fields"]["domain"] == "pub"]
        assert [r["ts"] for r in dropped] == [0, 500]
        retries = [r for r in net.events("push_retry") if r["fields"]["domain"] == "pub"]
        assert [(r["ts"], r["fields"]["retry"]) for r in retries] == [(500, 1), (1000, 2)]
        acked = [r for r in net.events("push_acked") if r["fields"]["domain"] == "pub"]
        # v1 ack at t=0, then the v2 ack lands after exactly drops * retry backoff.
        assert [r["ts"] for r in acked] == [0, 1000]
        assert net.peps["pub"].version == 2
        assert net.events("sync_alarm") == []

    def test_exhausted_retries_raise_a_sync_alarm(self):
        net = Net(max_retries=2)
        net.controller.update_policies({"op": "replace", "rules": RAW_RULES}, actor="op")
        net.kernel.run_until(0)
        net.controller.drop_next_pushes("pub", 10)
        net.controller.update_policies({"op": "remove_rule", "rule_id": "net-users"}, actor="op")
        net.kernel.run_until(1400)  # attempts at 0, 500, 1000; budget exhausted at 1500
        assert net.events("sync_alarm") == []
        net.kernel.run_until(1500)
        alarms = net.events("sync_alarm")
        assert len(alarms) == 1
        assert alarms[0]["ts"] == 1500
        assert alarms[0]["fields"] == {"domain": "pub", "version": 2, "retries": 2}
        assert net.peps["pub"].version == 1

    def test_reconcile_recovers_after_a_sync_alarm(self):
        net = Net(max_retries=2)
        net.controller.update_policies({"op": "replace", "rules": RAW_RULES}, actor="op")
        net.kernel.run_until(0)
        net.controller.start_reconcile(10_000)
        net.controller.drop_next_pushes("pub", 3)
        net.controller.update_policies({"op": "remove_rule", "rule_id": "net-users"}, actor="op")
        net.kernel.run_until(10_000)
        assert len(net.events("sync_alarm")) == 1
        assert net.peps["pub"].version == 2  # reconcile tick re-pushed after the alarm

    def test_unreachable_domain_drops_deliveries_until_the_deadline(self):
        net = Net()
        net.controller.update_policies({"op": "replace", "rules": RAW_RULES}, actor="op")
        net.kernel.run_until(0)
        net.controller.set_unreachable("pub", until_ms=1200)
        net.controller.update_policies({"op": "remove_rule", "rule_id": "net-users"}, actor="op")
        view = net.controller.poll_sessions()
        assert view.unreachable == ("pub",)
        net.kernel.run_until(5000)
        acked = [r for r in net.events("push_acked") if r["fields"]["domain"] == "pub"]
        assert acked[-1]["fields"]["version"] == 2
        assert acked[-1]["ts"] >= 1200
        assert net.peps["pub"].version == 2


class TestReconcile:
    def test_converged_domains_are_noops(self):
        net = Net()
        net.controller.update_policies({"op": "replace", "rules": RAW_RULES}, actor="op")
        net.kernel.run_until(0)
        before = len(net.events("push_scheduled"))
        assert net.controller.reconcile() == [("priv", "noop"), ("pub", "noop")]
        assert len(net.events("push_scheduled")) == before
        assert net.events("reconcile_run")[-1]["fields"] == {"pushes": 0, "domains": 2}

    def test_domains_with_a_push_in_flight_are_skipped(self):
        net = Net()
        net.controller.update_policies({"op": "replace", "rules": RAW_RULES}, actor="op")
        assert net.controller.reconcile() == [("priv", "pending"), ("pub", "pending")]

    def test_divergence_triggers_a_push(self):
        net = Net()
        net.controller.update_policies({"op": "replace", "rules": RAW_RULES}, actor="op")
        net.kernel.run_until(0)
        net.peps["priv"].apply_program([], [], version=99)  # out-of-band interference
        net.controller.domains["priv"].acked_render = "tampered"
        assert net.controller.reconcile() == [("priv", "push"), ("pub", "noop")]
        net.kernel.run_until(net.kernel.clock)
        assert net.peps["priv"].version == 1

    def test_periodic_ticks_respect_the_horizon(self):
        net = Net(reconcile_interval_ms=1000)
        net.controller.update_policies({"op": "replace", "rules": RAW_RULES}, actor="op")
        net.controller.start_reconcile(3500)
        net.kernel.run_until(10_000)
        assert [r["ts"] for r in net.events("reconcile_run")] == [1000, 2000, 3000]


class TestSessionDrivenPushes:
    def test_attach_triggers_a_session_changed_push(self):
        net = Net()
        net.subscribe()
        net.controller.update_policies({"op": "replace", "rules": RAW_RULES}, actor="op")
        net.kernel.run_until(0)
        net.cores["priv"].attach(IMSI)
        net.kernel.run_until(0)
        table = net.peps["priv"].render_table()
        assert "acl 1000 permit 10.42.0.2/32 -> 10.60.0.30/32 port 443 proto *" in table
        assert net.peps["pub"].render_table().count("acl") == 0

    def test_release_prunes_the_program_on_the_next_reconcile(self):
        net = Net()
        net.subscribe()
        net.controller.update_policies({"op": "replace", "rules": RAW_RULES}, actor="op")
        net.controller.start_reconcile(5000)
        net.kernel.run_until(0)
        session = net.cores["priv"].attach(IMSI)
        net.kernel.run_until(0)
        assert "acl" in net.peps["priv"].render_table()
        # A plain release is invisible to the controller until reconcile runs.
        net.cores["priv"].release_session(session.session_id, reason="detach")
        net.kernel.run_until(500)
        assert "acl" in net.peps["priv"].render_table()
        net.kernel.run_until(1000)
        assert "acl" not in net.peps["priv"].render_table()

    def test_poll_sessions_aggregates_across_domains(self):
        net = Net()
        net.subscribe()
        net.subscribe(imsi=IOT_IMSI, profiles=("pub",), roles=("iot-op",))
        net.controller.update_policies({"op": "replace", "rules": RAW_RULES}, actor="op")
        net.kernel.run_until(0)
        net.cores["priv"].attach(IMSI)
        net.cores["pub"].attach(IOT_IMSI)
        net.kernel.run_until(0)
        view = net.controller.poll_sessions()
        assert [(e.domain, e.imsi, e.ip) for e in view.entries] == [
            ("priv", IMSI, "10.42.0.2"),
            ("pub", IOT_IMSI, "10.99.0.2"),
        ]


MANUAL_RULES = RAW_RULES + [
    {"rule_id": "vet-iot", "priority": 5, "subject": {"device_types": ["iot-sensor"]},
     "action": "attach", "resource": "*", "effect": "manual", "scope": "any"}
]


class TestOnboardingQueue:
    def pend(self, net):
        net.subscribe(imsi=IOT_IMSI, profiles=("pub",), roles=("iot-op",), device_type="iot-sensor")
        net.controller.update_policies({"op": "replace", "rules": MANUAL_RULES}, actor="op")
        net.kernel.run_until(0)
        session = net.cores["pub"].attach(IOT_IMSI)
        net.kernel.run_until(0)
        return session

    def test_held_sessions_reach_the_controller_queue(self):
        net = Net()
        session = self.pend(net)
        assert session.state == "pending"
        queued = net.events("onboarding_queued")
        assert len(queued) == 1
        assert queued[0]["fields"]["imsi"] == IOT_IMSI
        items = net.controller.list_onboarding()
        assert [i["session_id"] for i in items] == [session.session_id]
        assert items[0]["domain"] == "pub"

    def test_approval_flows_back_to_the_gateway(self):
        net = Net()
        session = self.pend(net)
        net.controller.approve_onboarding(session.session_id, actor="noc")
        net.kernel.run_until(net.kernel.clock)
        assert session.state == "active"
        resolved = net.events("onboarding_resolved")[0]["fields"]
        assert resolved["approved"] is True and resolved["actor"] == "noc"
        assert net.controller.list_onboarding() == []
        # The admitted session then flows into the enforcement program.
        assert "10.99.0.2/32" in net.peps["pub"].render_table()

    def test_denial_releases_the_session(self):
        net = Net()
        session = self.pend(net)
        net.controller.deny_onboarding(session.session_id, actor="noc")
        net.kernel.run_until(net.kernel.clock)
        assert session.state == "released"

    def test_unknown_item_raises(self):
        net = Net()
        with pytest.raises(UnknownOnboarding):
            net.controller.approve_onboarding(404, actor="noc")


class TestRoamAction:
    def setup_roamer(self):
        net = Net()
        net.subscribe(profiles=("priv", "pub"))
        net.controller.update_policies({"op": "replace", "rules": RAW_RULES}, actor="op")
        net.kernel.run_until(0)
        net.cores["priv"].attach(IMSI)
        net.kernel.run_until(0)
        return net

    def test_roam_moves_the_session_and_reprograms_both_domains(self):
        net = self.setup_roamer()
        assert net.controller.trigger_roam(IMSI, "pub") == "priv"
        net.kernel.run_until(0)
        assert net.cores["priv"].active_session(IMSI) is None
        assert net.cores["pub"].active_session(IMSI) is not None
        net.kernel.run_until(1)  # let trailing session_changed pushes land
        assert "10.99.0.2/32" in net.peps["pub"].render_table()
        assert "10.42.0.2/32" not in net.peps["priv"].render_table()

    def test_roam_to_the_serving_domain_is_rejected(self):
        net = self.setup_roamer()
        with pytest.raises(AlreadyAttached):
            net.controller.trigger_roam(IMSI, "priv")

    def test_roam_to_an_unknown_domain_is_rejected(self):
        net = self.setup_roamer()
        with pytest.raises(DomainUnreachable):
            net.controller.trigger_roam(IMSI, "lab")

    def test_roam_without_an_active_session_is_rejected(self):
        net = Net()
        net.subscribe(profiles=("priv", "pub"))
        with pytest.raises(NoActiveSession):
            net.controller.trigger_roam(IMSI, "pub")
