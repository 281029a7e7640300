"""Field-bus layer: group addressing, datapoint codecs, telegrams, commissioning.

Group addresses use the three-level split: 5 bits main, 3 bits middle,
8 bits sub, packed big-endian into 16 bits.  Datapoint 9.xxx is the
2-byte float: value = 0.01 * M * 2^E with a 12-bit two's-complement
mantissa (sign bit included) and 4-bit exponent; 0x7FFF is reserved and
never a valid encoding.  Encoders always produce the canonical form,
the one with the smallest exponent that holds the mantissa.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import SimError
from ..kernel import Kernel, SimEvent


class OutOfRange(SimError):
    """Value not representable by the datapoint type."""


class InvalidEncoding(SimError):
    """Byte payload is not a valid encoding for the datapoint type."""


class UnknownDpt(SimError):
    """Datapoint type id is not in the codec registry."""


class AddressInUse(SimError):
    """An individual address is already commissioned on the bus."""


class BadLink(SimError):
    """A group-object link is malformed or missing."""


class NoResponder(SimError):
    """A group read found no device linked outbound on the address."""


# -- addressing ---------------------------------------------------------------


@dataclass(frozen=True)
class GroupAddress:
    main: int
    middle: int
    sub: int

    def __post_init__(self) -> None:
        if not (0 <= self.main <= 31 and 0 <= self.middle <= 7 and 0 <= self.sub <= 255):
            raise OutOfRange(f"group address fields out of range: {self.main}/{self.middle}/{self.sub}")

    def __str__(self) -> str:
        return f"{self.main}/{self.middle}/{self.sub}"

    @classmethod
    def parse(cls, text: str) -> "GroupAddress":
        parts = text.split("/")
        if len(parts) != 3:
            raise OutOfRange(f"expected main/middle/sub, got {text!r}")
        try:
            main, middle, sub = (int(p) for p in parts)
        except ValueError as exc:
            raise OutOfRange(f"non-numeric group address {text!r}") from exc
        return cls(main, middle, sub)


def ga_encode(ga: GroupAddress) -> int:
    return (ga.main << 11) | (ga.middle << 8) | ga.sub


def ga_decode(raw: int) -> GroupAddress:
    if not 0 <= raw <= 0xFFFF:
        raise OutOfRange(f"raw group address out of range: {raw}")
    return GroupAddress(main=(raw >> 11) & 0x1F, middle=(raw >> 8) & 0x07, sub=raw & 0xFF)


@dataclass(frozen=True)
class IndividualAddress:
    area: int
    line: int
    device: int

    def __post_init__(self) -> None:
        if not (0 <= self.area <= 15 and 0 <= self.line <= 15 and 0 <= self.device <= 255):
            raise OutOfRange(f"individual address out of range: {self.area}.{self.line}.{self.device}")

    def __str__(self) -> str:
        return f"{self.area}.{self.line}.{self.device}"

    @classmethod
    def parse(cls, text: str) -> "IndividualAddress":
        parts = text.split(".")
        if len(parts) != 3:
            raise OutOfRange(f"expected area.line.device, got {text!r}")
        try:
            area, line, device = (int(p) for p in parts)
        except ValueError as exc:
            raise OutOfRange(f"non-numeric individual address {text!r}") from exc
        return cls(area, line, device)


# -- datapoint codecs ----------------------------------------------------------

DPT9_MIN = -671088.64
DPT9_MAX = 670433.28


def dpt9_encode(value: float) -> bytes:
    if not DPT9_MIN <= value <= DPT9_MAX:
        raise OutOfRange(f"dpt9 value out of range: {value}")
    mantissa = 0
    exponent = 0
    for exponent in range(16):
        mantissa = round(value * 100.0 / (1 << exponent))
        if -2048 <= mantissa <= 2047:
            break
    # Canonical form: halve the exponent while the doubled mantissa still fits.
    while exponent > 0 and -2048 <= mantissa * 2 <= 2047:
        mantissa *= 2
        exponent -= 1
    if exponent == 15 and mantissa == 2047:
        raise OutOfRange("dpt9 value rounds to the reserved encoding 0x7FFF")
    sign = 1 if mantissa < 0 else 0
    raw = (sign << 15) | (exponent << 11) | (mantissa & 0x7FF)
    return raw.to_bytes(2, "big")


def dpt9_decode(data: bytes) -> float:
    if len(data) != 2:
        raise InvalidEncoding(f"dpt9 needs 2 bytes, got {len(data)}")
    raw = int.from_bytes(data, "big")
    if raw == 0x7FFF:
        raise InvalidEncoding("0x7FFF is reserved")
    exponent = (raw >> 11) & 0x0F
    mantissa = raw & 0x7FF
    if raw & 0x8000:
        mantissa -= 2048
    return mantissa * (1 << exponent) / 100.0


def _dpt1_encode(value) -> bytes:
    if not isinstance(value, bool):
        raise OutOfRange(f"dpt1 needs a boolean, got {value!r}")
    return b"\x01" if value else b"\x00"


def _dpt1_decode(data: bytes) -> bool:
    if len(data) != 1 or data[0] not in (0, 1):
        raise InvalidEncoding(f"dpt1 needs one byte 0x00/0x01, got {data.hex()}")
    return data[0] == 1


def _dpt5_encode(value) -> bytes:
    if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value <= 255:
        raise OutOfRange(f"dpt5 needs an integer in 0..255, got {value!r}")
    return bytes([value])


def _dpt5_decode(data: bytes) -> int:
    if len(data) != 1:
        raise InvalidEncoding(f"dpt5 needs one byte, got {len(data)}")
    return data[0]


def _dpt9_encode_checked(value) -> bytes:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise OutOfRange(f"dpt9 needs a number, got {value!r}")
    return dpt9_encode(float(value))


# Registered subtypes share the base codec; subtype ids pin the unit in
# commissioning data (9.001 temperature, 9.008 air quality in ppm).
_CODECS = {
    "1.001": (_dpt1_encode, _dpt1_decode),
    "5.010": (_dpt5_encode, _dpt5_decode),
    "9.001": (_dpt9_encode_checked, dpt9_decode),
    "9.008": (_dpt9_encode_checked, dpt9_decode),
}


def known_dpts() -> frozenset[str]:
    return frozenset(_CODECS)


def dpt_encode(dpt: str, value) -> bytes:
    codec = _CODECS.get(dpt)
    if codec is None:
        raise UnknownDpt(f"no codec for dpt {dpt!r}")
    return codec[0](value)


def dpt_decode(dpt: str, data: bytes):
    codec = _CODECS.get(dpt)
    if codec is None:
        raise UnknownDpt(f"no codec for dpt {dpt!r}")
    return codec[1](data)


_DEFAULTS = {"1.001": False, "5.010": 0, "9.001": 0.0, "9.008": 0.0}


# -- telegrams and devices -------------------------------------------------------


@dataclass(frozen=True)
class Telegram:
    src: str
    ga: GroupAddress
    service: str
    payload: bytes


@dataclass(frozen=True)
class Link:
    object: str
    ga: GroupAddress
    dpt: str
    direction: str  # "in": device listens, "out": device transmits


@dataclass(frozen=True)
class CommissioningRecord:
    device_id: str
    ia: IndividualAddress
    links: tuple[Link, ...]
    parameters: dict = field(default_factory=dict)


class Device:
    """One commissioned bus participant with decoded group-object state."""

    def __init__(self, record: CommissioningRecord, bus: "TelegramBus"):
        self.record = record
        self.bus = bus
        self.hops = int(record.parameters.get("hops", 1))
        if self.hops < 1:
            raise BadLink(f"device {record.device_id}: hops must be >= 1")
        self.state: dict[str, object] = {}
        seen_objects: set[str] = set()
        for link in record.links:
            if link.dpt not in _CODECS:
                raise UnknownDpt(f"device {record.device_id}: no codec for dpt {link.dpt!r}")
            if link.direction not in ("in", "out"):
                raise BadLink(f"device {record.device_id}: bad direction {link.direction!r}")
            if link.object in seen_objects:
                raise BadLink(f"device {record.device_id}: duplicate object {link.object!r}")
            seen_objects.add(link.object)
            self.state[link.object] = _DEFAULTS[link.dpt]

    @property
    def device_id(self) -> str:
        return self.record.device_id

    @property
    def ia(self) -> str:
        return str(self.record.ia)

    def out_link(self, object_name: str) -> Link:
        for link in self.record.links:
            if link.object == object_name and link.direction == "out":
                return link
        raise BadLink(f"device {self.device_id}: no outbound link for {object_name!r}")

    def transmit(self, object_name: str, value) -> bytes:
        """Encode and send the object's value on its outbound group address."""
        link = self.out_link(object_name)
        payload = dpt_encode(link.dpt, value)
        self.state[object_name] = dpt_decode(link.dpt, payload)
        self.bus.group_write(link.ga, payload, src=self.ia)
        return payload

    def receive(self, telegram: Telegram, link: Link) -> None:
        self.state[link.object] = dpt_decode(link.dpt, telegram.payload)


class TelegramBus:
    """Shared segment with a fixed per-hop latency toward the trunk.

    A telegram sent by a device at distance ``hops`` reaches the trunk,
    and with it every listener, ``hops * hop_ms`` later.  Deliveries
    preserve send order through the kernel's (time, sequence) ordering.
    """

    def __init__(self, kernel: Kernel | None = None, hop_ms: int = 5):
        self.kernel = kernel
        self.hop_ms = hop_ms
        self.devices: dict[str, Device] = {}
        self.devices_by_id: dict[str, Device] = {}
        self._listeners_in: dict[int, list[tuple[Device, Link]]] = {}
        self._responders_out: dict[int, list[tuple[Device, Link]]] = {}
        self.hub_listener = None
        self._component = "iot.bus"
        if kernel is not None:
            kernel.register(self._component, self._on_event)

    def commission(self, record: CommissioningRecord) -> Device:
        ia_text = str(record.ia)
        if ia_text in self.devices:
            raise AddressInUse(f"individual address {ia_text} already commissioned")
        if record.device_id in self.devices_by_id:
            raise AddressInUse(f"device id {record.device_id!r} already commissioned")
        device = Device(record, self)
        self.devices[ia_text] = device
        self.devices_by_id[record.device_id] = device
        for link in record.links:
            table = self._listeners_in if link.direction == "in" else self._responders_out
            table.setdefault(ga_encode(link.ga), []).append((device, link))
        if self.kernel is not None:
            self.kernel.log(
                self._component,
                "commissioned",
                device_id=record.device_id,
                ia=ia_text,
                links=len(record.links),
                hops=device.hops,
            )
        return device

    def group_write(
        self,
        ga: GroupAddress,
        payload: bytes,
        src: str,
        origin_ts: int | None = None,
    ) -> int:
        """Send a group write; returns the number of linked receivers."""
        sender = self.devices.get(src)
        if sender is None:
            raise BadLink(f"unknown source address {src!r}")
        if origin_ts is None and self.kernel is not None:
            # Stamp at emission so loop latency spans sensor to actuator.
            origin_ts = self.kernel.clock
        telegram = Telegram(src=src, ga=ga, service="write", payload=payload)
        receivers = [
            (device, link)
            for device, link in self._listeners_in.get(ga_encode(ga), [])
            if device.ia != src
        ]
        if self.kernel is None:
            self._deliver(telegram, origin_ts)
        else:
            self.kernel.after(
                sender.hops * self.hop_ms,
                self._component,
                "telegram",
                {"telegram": telegram, "origin_ts": origin_ts},
            )
        return len(receivers)

    def _deliver(self, telegram: Telegram, origin_ts: int | None) -> None:
        for device, link in self._listeners_in.get(ga_encode(telegram.ga), []):
            if device.ia == telegram.src:
                continue
            device.receive(telegram, link)
        if self.kernel is not None:
            self.kernel.log(
                self._component,
                "telegram",
                src=telegram.src,
                ga=str(telegram.ga),
                service=telegram.service,
                payload=telegram.payload.hex(),
            )
        if self.hub_listener is not None:
            self.hub_listener(telegram, origin_ts)

    def group_read(self, ga: GroupAddress) -> Telegram:
        """Synchronous read: the first outbound-linked device answers."""
        responders = sorted(
            self._responders_out.get(ga_encode(ga), []), key=lambda pair: pair[0].ia
        )
        if not responders:
            raise NoResponder(f"no device answers reads on {ga}")
        device, link = responders[0]
        payload = dpt_encode(link.dpt, device.state[link.object])
        response = Telegram(src=device.ia, ga=ga, service="response", payload=payload)
        if self.kernel is not None:
            self.kernel.log(
                self._component,
                "telegram",
                src=device.ia,
                ga=str(ga),
                service="response",
                payload=payload.hex(),
            )
        return response

    def _on_event(self, ev: SimEvent) -> None:
        if ev.kind == "telegram":
            self._deliver(ev.payload["telegram"], ev.payload.get("origin_ts"))
        else:
            raise ValueError(f"unexpected event kind for bus: {ev.kind}")
