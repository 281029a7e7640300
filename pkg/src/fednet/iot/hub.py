"""Bridge between the field bus and the pub/sub plane, plus loop logic.

The bridge republishes mapped bus telegrams as retained messages and
writes mapped command messages back to the bus.  Its own telegrams are
suppressed on the way back up, so a command never echoes into a second
publish.  Origin timestamps ride along both legs, which lets the bridge
log the full sensor-to-actuator latency of a control loop.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..kernel import Kernel
from .knx import GroupAddress, Telegram, TelegramBus, dpt_decode, dpt_encode, ga_encode
from .pubsub import Broker, Message


def render_value(value) -> str:
    """Fixed text form for payloads so logs and replays compare byte-equal."""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return f"{value:.2f}"
    return str(value)


def parse_value(dpt: str, text: str):
    if dpt == "1.001":
        if text == "1":
            return True
        if text == "0":
            return False
        raise ValueError(f"dpt1 payload must be '0' or '1', got {text!r}")
    if dpt.startswith("9."):
        return float(text)
    return int(text)


@dataclass(frozen=True)
class TelemetryMap:
    ga: GroupAddress
    topic: str
    dpt: str


@dataclass(frozen=True)
class CommandMap:
    topic: str
    ga: GroupAddress
    dpt: str


class Bridge:
    """The hub device's bridging function."""

    def __init__(
        self,
        kernel: Kernel,
        bus: TelegramBus,
        broker: Broker,
        ia: str,
        telemetry: list[TelemetryMap],
        commands: list[CommandMap],
    ):
        self.kernel = kernel
        self.bus = bus
        self.broker = broker
        self.ia = ia
        self._component = "iot.hub"
        self._telemetry = {ga_encode(m.ga): m for m in telemetry}
        self._commands = {m.topic: m for m in commands}
        bus.hub_listener = self.on_telegram
        for topic in sorted(self._commands):
            broker.subscribe(topic, self.on_command)

    def on_telegram(self, telegram: Telegram, origin_ts: int | None) -> None:
        if telegram.src == self.ia:
            return
        mapping = self._telemetry.get(ga_encode(telegram.ga))
        if mapping is None:
            self.kernel.log(self._component, "bridge_drop", ga=str(telegram.ga))
            return
        value = dpt_decode(mapping.dpt, telegram.payload)
        text = render_value(value)
        self.broker.publish(
            mapping.topic,
            text.encode("utf-8"),
            retained=True,
            origin_ts=origin_ts,
            origin="telemetry",
        )
        self.kernel.log(
            self._component,
            "bridge_published",
            ga=str(telegram.ga),
            topic=mapping.topic,
            value=text,
        )

    def on_command(self, message: Message) -> None:
        mapping = self._commands[message.topic]
        text = message.payload.decode("utf-8", "replace")
        try:
            value = parse_value(mapping.dpt, text)
            payload = dpt_encode(mapping.dpt, value)
        except Exception as exc:
            self.kernel.log(
                self._component,
                "command_rejected",
                topic=message.topic,
                reason=type(exc).__name__,
            )
            return
        self.bus.group_write(mapping.ga, payload, src=self.ia, origin_ts=message.origin_ts)
        origin_ts = message.origin_ts if message.origin_ts is not None else self.kernel.clock
        self.kernel.log(
            self._component,
            "command_written",
            topic=message.topic,
            ga=str(mapping.ga),
            value=render_value(value),
            origin=message.origin,
            origin_ts=origin_ts,
            latency_ms=self.kernel.clock - origin_ts,
        )


class HvacController:
    """Three-step ventilation loop driven by an air-quality topic.

    Raises the level one step per sample above the upper threshold,
    lowers one step per sample below the lower one, and republishes the
    sample's origin timestamp with each command so end-to-end loop
    latency stays measurable downstream.
    """

    def __init__(
        self,
        kernel: Kernel,
        broker: Broker,
        sample_topic: str,
        command_topic: str,
        raise_above: float = 1000.0,
        lower_below: float = 800.0,
        max_level: int = 2,
    ):
        self.kernel = kernel
        self.broker = broker
        self.command_topic = command_topic
        self.raise_above = raise_above
        self.lower_below = lower_below
        self.max_level = max_level
        self.level = 0
        self._component = "iot.hvac"
        broker.subscribe(sample_topic, self.on_sample)

    def on_sample(self, message: Message) -> None:
        try:
            ppm = float(message.payload)
        except ValueError:
            self.kernel.log(
                self._component, "sample_rejected", payload=message.payload.decode("utf-8", "replace")
            )
            return
        level = self.level
        if ppm > self.raise_above and level < self.max_level:
            level += 1
        elif ppm < self.lower_below and level > 0:
            level -= 1
        if level == self.level:
            return
        self.level = level
        self.kernel.log(self._component, "vent_level", ppm=ppm, level=level)
        self.broker.publish(
            self.command_topic,
            str(level).encode("utf-8"),
            origin_ts=message.origin_ts,
            origin="loop",
        )


class AlarmWatcher:
    """Raises a security alarm for every denied flow aimed at a protected service."""

    def __init__(self, kernel: Kernel, service_ips: dict[str, str]):
        self.kernel = kernel
        self.service_ips = dict(service_ips)
        self.count = 0
        self._component = "iot.alarm"

    def observe_flow(self, domain: str, src: str, dst: str, action: str) -> bool:
        if action != "deny" or dst not in self.service_ips:
            return False
        self.count += 1
        self.kernel.log(
            self._component,
            "security_alarm",
            domain=domain,
            src=src,
            dst=dst,
            service=self.service_ips[dst],
        )
        return True
