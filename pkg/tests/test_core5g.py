"""Per-domain core: registry, session lifecycle, addressing, dual-SIM."""

import pytest

from fednet.core5g import (
    AlreadyAttached,
    Core5G,
    DuplicateImsi,
    IdAllocator,
    NoActiveSession,
    NoSimProfile,
    NotPending,
    PduSession,
    PoolExhausted,
    Slice,
    Subscriber,
    UnknownImsi,
    UnknownSession,
    UnknownSlice,
)
from fednet.kernel import Kernel

IMSI = "001010000000001"
OTHER = "001010000000002"


def make_core(pool="10.42.0.0/24"):
    kernel = Kernel(seed=1)
    captured = []
    kernel.register("gateway.lab", captured.append)
    slices = {
        "cust": Slice("cust", "best-effort", "tag-c"),
        "mgmt": Slice("mgmt", "assured", "tag-m"),
    }
    core = Core5G(kernel, "lab", pool, slices)
    return kernel, core, captured


def add_subscriber(core, imsi=IMSI, profiles=("lab",), active=True):
    core.register_subscriber(
        Subscriber(
            imsi=imsi,
            home_domain=profiles[0],
            sim_profiles=list(profiles),
            roles=frozenset({"customer"}),
            device_type="ue",
            posture=1,
            subscription_active=active,
        )
    )


class TestSubscriberRecords:
    def test_imsi_must_be_fifteen_digits(self):
        with pytest.raises(ValueError):
            Subscriber("12345", "lab", ["lab"], frozenset(), "ue", 1)
        with pytest.raises(ValueError):
            Subscriber("00101000000000x", "lab", ["lab"], frozenset(), "ue", 1)

    def test_sim_profiles_must_be_non_empty_and_unique(self):
        with pytest.raises(ValueError):
            Subscriber(IMSI, "lab", [], frozenset(), "ue", 1)
        with pytest.raises(ValueError):
            Subscriber(IMSI, "lab", ["lab", "lab"], frozenset(), "ue", 1)

    def test_posture_is_bounded(self):
        with pytest.raises(ValueError):
            Subscriber(IMSI, "lab", ["lab"], frozenset(), "ue", 4)

    def test_duplicate_registration_is_rejected(self):
        _, core, _ = make_core()
        add_subscriber(core)
        with pytest.raises(DuplicateImsi):
            add_subscriber(core)

    def test_context_projection_carries_the_policy_attributes(self):
        _, core, _ = make_core()
        add_subscriber(core)
        ctx = core.query_subscriber_context(IMSI)
        assert ctx.imsi == IMSI
        assert ctx.subscription_active is True
        assert ctx.device_type == "ue"
        assert ctx.posture == 1
        assert ctx.roles == frozenset({"customer"})
        assert ctx.home_domain == "lab"

    def test_unknown_imsi_queries_raise(self):
        _, core, _ = make_core()
        with pytest.raises(UnknownImsi):
            core.query_subscriber_context(IMSI)


class TestAttach:
    def test_attach_creates_a_pending_session_and_asks_the_gateway(self):
        kernel, core, captured = make_core()
        add_subscriber(core)
        session = core.attach(IMSI)
        assert session.state == "pending"
        assert session.ip is None
        kernel.run_until(0)
        assert len(captured) == 1
        assert captured[0].kind == "access_request"
        assert captured[0].payload == {
            "session_id": session.session_id,
            "imsi": IMSI,
            "via_federation": False,
            "via_vpn": False,
        }
        requested = [r for r in kernel.records if r["event"] == "attach_requested"]
        assert requested[0]["fields"]["imsi"] == IMSI

    def test_attach_requires_registration_and_a_sim_profile(self):
        _, core, _ = make_core()
        with pytest.raises(UnknownImsi):
            core.attach(IMSI)
        add_subscriber(core, profiles=("elsewhere", "lab"))
        core.subscribers[IMSI].sim_profiles = ["elsewhere"]
        with pytest.raises(NoSimProfile):
            core.attach(IMSI)

    def test_second_attach_while_live_is_rejected(self):
        _, core, _ = make_core()
        add_subscriber(core)
        pending = core.attach(IMSI)
        with pytest.raises(AlreadyAttached):
            core.attach(IMSI)
        core.admit_session(pending.session_id, "cust")
        with pytest.raises(AlreadyAttached):
            core.attach(IMSI)

    def test_attach_allowed_again_after_release(self):
        _, core, _ = make_core()
        add_subscriber(core)
        first = core.attach(IMSI)
        core.reject_session(first.session_id, reason="nope")
        second = core.attach(IMSI)
        assert second.session_id != first.session_id

    def test_vpn_flag_rides_along(self):
        kernel, core, captured = make_core()
        add_subscriber(core)
        session = core.attach(IMSI, vpn=True)
        assert session.vpn_tunnel is True
        kernel.run_until(0)
        assert captured[0].payload["via_vpn"] is True


class TestAdmission:
    def test_admit_activates_allocates_and_logs(self):
        kernel, core, _ = make_core()
        add_subscriber(core)
        session = core.attach(IMSI)
        core.admit_session(session.session_id, "cust")
        assert session.state == "active"
        assert session.ip == "10.42.0.2"
        assert session.slice_id == "cust"
        admitted = [r for r in kernel.records if r["event"] == "attach_admitted"][0]
        assert admitted["fields"]["ip"] == "10.42.0.2"
        assert admitted["fields"]["slice_id"] == "cust"

    def test_addresses_allocate_lowest_free_first(self):
        _, core, _ = make_core()
        add_subscriber(core)
        add_subscriber(core, imsi=OTHER)
        a = core.admit_session(core.attach(IMSI).session_id, "cust")
        b = core.admit_session(core.attach(OTHER).session_id, "cust")
        assert (a.ip, b.ip) == ("10.42.0.2", "10.42.0.3")
        core.release_session(a.session_id, reason="detach")
        c = core.admit_session(core.attach(IMSI).session_id, "cust")
        assert c.ip == "10.42.0.2"

    def test_pool_exhaustion_raises(self):
        _, core, _ = make_core(pool="10.42.0.0/30")
        add_subscriber(core)
        add_subscriber(core, imsi=OTHER)
        core.admit_session(core.attach(IMSI).session_id, "cust")
        with pytest.raises(PoolExhausted):
            core.admit_session(core.attach(OTHER).session_id, "cust")

    def test_slices_instantiate_once_on_first_use(self):
        kernel, core, _ = make_core()
        add_subscriber(core)
        add_subscriber(core, imsi=OTHER)
        core.admit_session(core.attach(IMSI).session_id, "cust")
        core.admit_session(core.attach(OTHER).session_id, "cust")
        instantiated = [r for r in kernel.records if r["event"] == "slice_instantiated"]
        assert len(instantiated) == 1
        assert instantiated[0]["fields"] == {
            "domain": "lab",
            "slice_id": "cust",
            "qos_class": "best-effort",
        }

    def test_admitting_into_an_unknown_slice_raises(self):
        _, core, _ = make_core()
        add_subscriber(core)
        session = core.attach(IMSI)
        with pytest.raises(UnknownSlice):
            core.admit_session(session.session_id, "ghost")

    def test_admission_needs_a_pending_session(self):
        _, core, _ = make_core()
        add_subscriber(core)
        session = core.attach(IMSI)
        core.admit_session(session.session_id, "cust")
        with pytest.raises(NotPending):
            core.admit_session(session.session_id, "cust")
        with pytest.raises(UnknownSession):
            core.admit_session(9999, "cust")

    def test_reject_releases_and_logs_the_reason(self):
        kernel, core, _ = make_core()
        add_subscriber(core)
        session = core.attach(IMSI)
        core.reject_session(session.session_id, reason="subscription_inactive")
        assert session.state == "released"
        denied = [r for r in kernel.records if r["event"] == "attach_denied"][0]
        assert denied["fields"]["reason"] == "subscription_inactive"


class TestLifecycle:
    def test_release_logs_and_blocks_double_release(self):
        kernel, core, _ = make_core()
        add_subscriber(core)
        session = core.admit_session(core.attach(IMSI).session_id, "cust")
        core.release_session(session.session_id, reason="detach")
        assert session.state == "released"
        assert [r for r in kernel.records if r["event"] == "session_released"]
        with pytest.raises(NotPending):
            core.release_session(session.session_id, reason="again")

    def test_active_session_ignores_pending_and_released(self):
        _, core, _ = make_core()
        add_subscriber(core)
        session = core.attach(IMSI)
        assert core.active_session(IMSI) is None
        core.admit_session(session.session_id, "cust")
        assert core.active_session(IMSI) is session
        core.release_session(session.session_id, reason="detach")
        assert core.active_session(IMSI) is None

    def test_live_sessions_are_ordered_by_session_id(self):
        _, core, _ = make_core()
        add_subscriber(core)
        add_subscriber(core, imsi=OTHER)
        first = core.attach(IMSI)
        second = core.attach(OTHER)
        assert [s.session_id for s in core.live_sessions()] == [
            first.session_id,
            second.session_id,
        ]

    def test_session_ids_are_unique_across_cores_sharing_an_allocator(self):
        kernel = Kernel()
        ids = IdAllocator()
        kernel.register("gateway.a", lambda ev: None)
        kernel.register("gateway.b", lambda ev: None)
        slices = {"cust": Slice("cust", "best-effort", "t")}
        core_a = Core5G(kernel, "a", "10.1.0.0/24", slices, ids)
        core_b = Core5G(kernel, "b", "10.2.0.0/24", slices, ids)
        add_subscriber(core_a, profiles=("a",))
        add_subscriber(core_b, imsi=OTHER, profiles=("b",))
        sa = core_a.attach(IMSI)
        sb = core_b.attach(OTHER)
        assert sa.session_id != sb.session_id


class TestDualSim:
    def test_switch_requires_an_active_session_and_a_profile(self):
        _, core, _ = make_core()
        add_subscriber(core, profiles=("lab", "roam-target"))
        with pytest.raises(NoActiveSession):
            core.switch_sim(IMSI, "roam-target")
        session = core.attach(IMSI)
        core.admit_session(session.session_id, "cust")
        with pytest.raises(NoSimProfile):
            core.switch_sim(IMSI, "nowhere")
        with pytest.raises(UnknownImsi):
            core.switch_sim(OTHER, "roam-target")

    def test_switch_hands_the_roam_to_the_gateway(self):
        kernel, core, captured = make_core()
        add_subscriber(core, profiles=("lab", "away"))
        session = core.admit_session(core.attach(IMSI).session_id, "cust")
        kernel.run_until(0)
        captured.clear()
        core.switch_sim(IMSI, "away")
        kernel.run_until(0)
        assert captured[0].kind == "roam_request"
        assert captured[0].payload == {
            "imsi": IMSI,
            "to_domain": "away",
            "old_session_id": session.session_id,
        }

    def test_complete_roam_releases_the_old_session(self):
        kernel, core, _ = make_core()
        add_subscriber(core, profiles=("lab", "away"))
        session = core.admit_session(core.attach(IMSI).session_id, "cust")
        core.complete_roam(IMSI, "away", session.session_id)
        assert session.state == "released"
        switched = [r for r in kernel.records if r["event"] == "sim_switched"][0]
        assert switched["fields"] == {
            "imsi": IMSI,
            "domain": "lab",
            "to_domain": "away",
            "old_session_id": session.session_id,
        }
        released = [r for r in kernel.records if r["event"] == "session_released"][0]
        assert released["fields"]["reason"] == "sim_switch"
