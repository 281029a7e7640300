"""Shared exception base for the simulator.

Every module defines its own operation-level exceptions (named after the
condition they signal) and derives them from :class:`SimError` so harness
code can catch simulator faults without swallowing programming errors.
"""


class SimError(Exception):
    """Base class for all simulator-defined errors."""
