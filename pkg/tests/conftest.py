"""Shared fixtures: a small two-domain scenario, the bundled workshop
scenario, and a terminal hook that prints one PASS/FAIL line per
acceptance criterion after the run."""

from __future__ import annotations

import copy
import json
from pathlib import Path

import pytest

from fednet import harness, scenario

REPO_ROOT = Path(__file__).resolve().parents[1]
WORKSHOP = REPO_ROOT / "scenarios" / "workshop.json"

_MINI = {
    "name": "mini",
    "version": 1,
    "seed": 11,
    "horizon_ms": 30000,
    "domains": {
        "private": {
            "pool": "10.42.0.0/16",
            "gateway_key": "aa" * 32,
            "slices": {
                "cust": {"qos_class": "best-effort", "isolation_tag": "cust"},
                "iot": {"qos_class": "low-latency", "isolation_tag": "iot"},
                "mgmt": {"qos_class": "assured", "isolation_tag": "mgmt"},
            },
        },
        "public": {
            "pool": "10.99.0.0/16",
            "gateway_key": "bb" * 32,
            "slices": {
                "cust": {"qos_class": "best-effort", "isolation_tag": "cust"},
                "iot": {"qos_class": "low-latency", "isolation_tag": "iot"},
                "mgmt": {"qos_class": "assured", "isolation_tag": "mgmt"},
            },
        },
    },
    "federation": {"key": "cc" * 32, "assertion_ttl_ms": 600000},
    "controller": {"retry_ms": 500, "max_retries": 10, "reconcile_interval_ms": 1000},
    "services": {
        "home-assistant": {"ip": "10.60.0.10", "port": 8123, "slice_id": "iot"},
        "mqtt-broker": {"ip": "10.60.0.20", "port": 1883, "slice_id": "iot"},
        "customer-portal": {"ip": "10.60.0.30", "port": 443, "slice_id": "cust"},
    },
    "role_slice_map": {"manager": "mgmt", "customer": "cust", "iot-op": "iot"},
    "rules": [
        {
            "rule_id": "attach-any",
            "priority": 100,
            "subject": {},
            "action": "attach",
            "resource": "*",
            "effect": "permit",
            "scope": "any",
        },
        {
            "rule_id": "mgr-access",
            "priority": 10,
            "subject": {"roles": ["manager"]},
            "action": "access",
            "resource": "*",
            "effect": "permit",
            "scope": "any",
        },
        {
            "rule_id": "mgr-manage",
            "priority": 10,
            "subject": {"roles": ["manager"]},
            "action": "manage",
            "resource": "*",
            "effect": "permit",
            "scope": "any",
        },
        {
            "rule_id": "portal-any",
            "priority": 20,
            "subject": {},
            "action": "access",
            "resource": "customer-portal",
            "effect": "permit",
            "scope": "any",
        },
        {
            "rule_id": "broker-local",
            "priority": 20,
            "subject": {"roles": ["iot-op"]},
            "action": "access",
            "resource": "mqtt-broker",
            "effect": "permit",
            "scope": "local",
        },
        {
            "rule_id": "net-users",
            "priority": 30,
            "subject": {"roles": ["customer", "manager"]},
            "action": "internet",
            "resource": "internet",
            "effect": "permit",
            "scope": "any",
        },
    ],
    "subscribers": [
        {
            "imsi": "001010000000001",
            "home_domain": "private",
            "sim_profiles": ["private", "public"],
            "roles": ["manager"],
            "device_type": "ue",
            "posture": 3,
        },
        {
            "imsi": "001010000000002",
            "home_domain": "private",
            "sim_profiles": ["private"],
            "roles": ["customer"],
            "device_type": "ue",
            "posture": 1,
        },
        {
            "imsi": "001010000000003",
            "home_domain": "public",
            "sim_profiles": ["public", "private"],
            "roles": ["iot-op"],
            "device_type": "laptop",
            "posture": 2,
        },
    ],
    "iot": {},
    "timeline": [],
    "expectations": [],
}


def mini_raw() -> dict:
    """A fresh, mutation-safe copy of the small scenario document."""
    return copy.deepcopy(_MINI)


@pytest.fixture
def mini() -> scenario.Scenario:
    return scenario.loads(mini_raw())


@pytest.fixture
def mini_world(mini) -> harness.World:
    return harness.World(mini)


@pytest.fixture(scope="session")
def workshop_path() -> str:
    return str(WORKSHOP)


@pytest.fixture(scope="session")
def workshop_doc() -> dict:
    with open(WORKSHOP, "r", encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def workshop_run():
    """One full run of the bundled scenario, shared across the suite."""
    world, report = harness.run_scenario(scenario.load(str(WORKSHOP)))
    return world, report


# -- acceptance summary --------------------------------------------------------

_acceptance: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call":
        _acceptance[report.nodeid] = report.outcome
    elif report.outcome != "passed":
        # A setup error or skip also decides the criterion.
        _acceptance.setdefault(report.nodeid, report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid in sorted(_acceptance):
        mark = "PASS" if _acceptance[nodeid] == "passed" else "FAIL"
        terminalreporter.write_line(f"[{mark}] {nodeid.split('::')[-1]}")
