"""Deterministic desk-scale simulator of a federated 5G and IoT fabric.

Two cellular domains are joined through open gateways and a federation
controller that compiles identity-level policy into per-session router
programs; a building-automation domain hangs off the same fabric.  Runs
are pure functions of (scenario, seed): equal inputs give byte-identical
event logs.
"""

from .kernel import Kernel
from .harness import RunReport, World, run_scenario
from .scenario import Scenario, load, validate

__version__ = "0.1.0"

__all__ = [
    "Kernel",
    "RunReport",
    "Scenario",
    "World",
    "load",
    "run_scenario",
    "validate",
    "__version__",
]
