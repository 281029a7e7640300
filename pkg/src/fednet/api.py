"""HTTP control surface over a live world.

Serve mode pairs a wall-clock stepper thread, which advances the virtual
clock in fixed slices up to the scenario horizon, with a threaded HTTP
server.  One lock serializes the stepper and every request handler, so
API commands always run between virtual timesteps and never observe a
half-dispatched event.  The event feed is a long-poll over the append-only
log: clients pass the index they have seen and block until there is more.

Every error response has the shape {"code": ..., "message": ...}.
"""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from .core5g import AlreadyAttached, NoActiveSession, NotPending, UnknownImsi, UnknownSession
from .errors import SimError
from .fedsdn import DomainUnreachable, UnknownOnboarding
from .gateway.policy import MalformedPolicy
from .harness import World

API_PREFIX = "/api/v1"

_ERROR_MAP = {
    MalformedPolicy: (400, "malformed_policy"),
    UnknownOnboarding: (404, "unknown_onboarding"),
    UnknownSession: (404, "unknown_session"),
    UnknownImsi: (404, "unknown_imsi"),
    NoActiveSession: (404, "no_active_session"),
    DomainUnreachable: (404, "unknown_domain"),
    AlreadyAttached: (409, "already_attached"),
    NotPending: (409, "not_pending"),
}


def _error_for(exc: SimError) -> tuple[int, str]:
    for klass, mapping in _ERROR_MAP.items():
        if isinstance(exc, klass):
            return mapping
    return (500, "internal_error")


class VersionConflict(SimError):
    """Policy write carried a stale version."""


class ServeRunner:
    """Advances the world on wall time and serializes API access to it."""

    def __init__(self, world: World, tick_ms: int = 25, speed: float = 1.0):
        self.world = world
        self.tick_ms = tick_ms
        self.speed = speed
        self.lock = threading.RLock()
        self.new_records = threading.Condition(self.lock)
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        world.kernel.on_record = self._on_record

    def _on_record(self, record: dict) -> None:
        # Called with the lock already held by whichever thread is stepping.
        self.new_records.notify_all()

    def start(self) -> None:
        self._thread = threading.Thread(target=self._run, name="world-stepper", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2)
        # Detach the feed hook so the world can keep running (e.g. to finish
        # the horizon after shutdown) without notifying an un-held condition.
        with self.lock:
            self.world.kernel.on_record = None
            self.new_records.notify_all()

    def horizon_reached(self) -> bool:
        with self.lock:
            return self.world.kernel.clock >= self.world.scenario.horizon_ms

    def _run(self) -> None:
        horizon = self.world.scenario.horizon_ms
        step = max(1, int(self.tick_ms * self.speed))
        while not self._stop.is_set():
            with self.lock:
                clock = self.world.kernel.clock
                if clock < horizon:
                    self.world.kernel.run_until(min(clock + step, horizon))
                    self.new_records.notify_all()
            time.sleep(self.tick_ms / 1000.0)

    def call(self, fn):
        """Run a world mutation between timesteps."""
        with self.lock:
            return fn()


class _Handler(BaseHTTPRequestHandler):
    runner: ServeRunner = None  # set by make_server
    protocol_version = "HTTP/1.1"

    # -- plumbing ---------------------------------------------------------

    def log_message(self, fmt, *args):  # quiet server
        pass

    def _send(self, status: int, payload: dict) -> None:
        body = json.dumps(payload, sort_keys=True).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, PUT, POST, DELETE, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.end_headers()
        self.wfile.write(body)

    def _fail(self, status: int, code: str, message: str) -> None:
        self._send(status, {"code": code, "message": message})

    def _body(self) -> dict:
        length = int(self.headers.get("Content-Length", 0))
        if length == 0:
            return {}
        raw = self.rfile.read(length)
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ValueError(f"invalid JSON body: {exc}") from exc
        if not isinstance(data, dict):
            raise ValueError("body must be a JSON object")
        return data

    def _route(self, method: str) -> None:
        parsed = urlparse(self.path)
        if not parsed.path.startswith(API_PREFIX):
            self._fail(404, "not_found", f"unknown path {parsed.path}")
            return
        parts = [p for p in parsed.path[len(API_PREFIX):].split("/") if p]
        query = parse_qs(parsed.query)
        try:
            handler = getattr(self, f"_{method}_{'_'.join(parts[:1])}", None)
            if handler is None:
                self._fail(404, "not_found", f"unknown path {parsed.path}")
                return
            handler(parts, query)
        except ValueError as exc:
            self._fail(400, "bad_request", str(exc))
        except VersionConflict as exc:
            self._fail(409, "version_conflict", str(exc))
        except SimError as exc:
            status, code = _error_for(exc)
            self._fail(status, code, str(exc))

    def do_GET(self) -> None:
        self._route("get")

    def do_PUT(self) -> None:
        self._route("put")

    def do_POST(self) -> None:
        self._route("post")

    def do_DELETE(self) -> None:
        self._route("delete")

    def do_OPTIONS(self) -> None:
        self._send(204, {})

    # -- policies -----------------------------------------------------------

    def _get_policies(self, parts, query) -> None:
        runner = self.runner

        def read():
            ps = runner.world.controller.policyset
            return {"version": ps.version, "rules": list(ps.raw_rules)}

        self._send(200, runner.call(read))

    def _put_policies(self, parts, query) -> None:
        body = self._body()
        runner = self.runner

        def write():
            controller = runner.world.controller
            expected = body.get("version")
            if expected is not None and expected != controller.policyset.version:
                raise VersionConflict(
                    f"expected version {controller.policyset.version}, got {expected}"
                )
            version = controller.update_policies(
                {"op": "replace", "rules": body.get("rules", [])},
                actor=body.get("actor", "api"),
            )
            return {"version": version}

        self._send(200, runner.call(write))

    def _post_policies(self, parts, query) -> None:
        if parts[1:2] != ["rules"]:
            self._fail(404, "not_found", "POST supports /policies/rules")
            return
        body = self._body()
        runner = self.runner

        def write():
            version = runner.world.controller.update_policies(
                {"op": "add_rule", "rule": body.get("rule", body)},
                actor=body.get("actor", "api"),
            )
            return {"version": version}

        self._send(200, runner.call(write))

    def _delete_policies(self, parts, query) -> None:
        if len(parts) != 3 or parts[1] != "rules":
            self._fail(404, "not_found", "DELETE supports /policies/rules/{rule_id}")
            return
        rule_id = parts[2]
        runner = self.runner

        def write():
            version = runner.world.controller.update_policies(
                {"op": "remove_rule", "rule_id": rule_id}, actor="api"
            )
            return {"version": version}

        self._send(200, runner.call(write))

    # -- sessions and onboarding ----------------------------------------------

    def _get_sessions(self, parts, query) -> None:
        runner = self.runner

        def read():
            view = runner.world.controller.poll_sessions()
            return {
                "as_of": view.as_of,
                "unreachable": list(view.unreachable),
                "sessions": [
                    {
                        "session_id": e.session_id,
                        "imsi": e.imsi,
                        "domain": e.domain,
                        "ip": e.ip,
                        "slice_id": e.slice_id,
                        "state": e.state,
                        "service_session_id": e.service_session_id,
                        "vpn": e.vpn,
                        "permitted": sorted(f"{a}:{r}" for a, r in e.permitted),
                    }
                    for e in view.entries
                ],
            }

        self._send(200, runner.call(read))

    def _get_onboarding(self, parts, query) -> None:
        runner = self.runner
        self._send(
            200, {"pending": runner.call(runner.world.controller.list_onboarding)}
        )

    def _post_onboarding(self, parts, query) -> None:
        if len(parts) != 3 or parts[2] not in ("approve", "deny"):
            self._fail(404, "not_found", "POST supports /onboarding/{session_id}/approve|deny")
            return
        try:
            session_id = int(parts[1])
        except ValueError as exc:
            raise ValueError(f"session id must be an integer: {parts[1]!r}") from exc
        body = self._body()
        actor = body.get("actor", "api")
        runner = self.runner

        def write():
            if parts[2] == "approve":
                runner.world.controller.approve_onboarding(session_id, actor)
            else:
                runner.world.controller.deny_onboarding(session_id, actor)
            return {"session_id": session_id, "decision": parts[2]}

        self._send(200, runner.call(write))

    # -- actions -----------------------------------------------------------------

    def _post_actions(self, parts, query) -> None:
        if parts[1:] != ["roam"]:
            self._fail(404, "not_found", "POST supports /actions/roam")
            return
        body = self._body()
        imsi = body.get("imsi")
        to_domain = body.get("to_domain")
        if not imsi or not to_domain:
            raise ValueError("roam needs imsi and to_domain")
        runner = self.runner
        from_domain = runner.call(
            lambda: runner.world.controller.trigger_roam(imsi, to_domain)
        )
        self._send(200, {"imsi": imsi, "from_domain": from_domain, "to_domain": to_domain})

    # -- event feed ----------------------------------------------------------------

    def _get_events(self, parts, query) -> None:
        try:
            since = int(query.get("since", ["0"])[0])
            timeout_ms = int(query.get("timeout_ms", ["0"])[0])
        except ValueError as exc:
            raise ValueError("since and timeout_ms must be integers") from exc
        since = max(0, since)
        timeout_ms = min(timeout_ms, 30_000)
        runner = self.runner
        deadline = time.monotonic() + timeout_ms / 1000.0
        with runner.new_records:
            records = runner.world.kernel.records[since:]
            while not records:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                runner.new_records.wait(remaining)
                records = runner.world.kernel.records[since:]
            payload = {
                "next": since + len(records),
                "clock": runner.world.kernel.clock,
                "records": list(records),
            }
        self._send(200, payload)


def make_server(runner: ServeRunner, port: int) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"runner": runner})
    server = ThreadingHTTPServer(("127.0.0.1", port), handler)
    return server
