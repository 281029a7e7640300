"""Topic-based pub/sub with retained messages and wildcard filters.

Filters are slash-separated segments.  "+" matches exactly one segment,
"#" matches any remainder (including none) and may only close a filter.
Delivery order among subscribers of one message is subscription order;
the broker adds a fixed hop latency per leg when a kernel is attached.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from ..errors import SimError
from ..kernel import Kernel, SimEvent


class BadFilter(SimError):
    """Topic filter (or publish topic) is syntactically invalid."""


def validate_filter(pattern: str) -> None:
    if not pattern:
        raise BadFilter("empty filter")
    segments = pattern.split("/")
    for i, segment in enumerate(segments):
        if "#" in segment:
            if segment != "#" or i != len(segments) - 1:
                raise BadFilter(f"'#' must be the whole final segment: {pattern!r}")
        elif "+" in segment and segment != "+":
            raise BadFilter(f"'+' must be a whole segment: {pattern!r}")


def validate_topic(topic: str) -> None:
    if not topic:
        raise BadFilter("empty topic")
    if "+" in topic or "#" in topic:
        raise BadFilter(f"publish topics must not contain wildcards: {topic!r}")


def topic_matches(pattern: str, topic: str) -> bool:
    """True when the filter covers the topic ('#' matches zero or more segments)."""
    p_segs = pattern.split("/")
    t_segs = topic.split("/")
    for i, p in enumerate(p_segs):
        if p == "#":
            return True
        if i >= len(t_segs):
            return False
        if p != "+" and p != t_segs[i]:
            return False
    return len(p_segs) == len(t_segs)


@dataclass(frozen=True)
class Message:
    topic: str
    payload: bytes
    retained: bool = False
    origin_ts: int | None = None
    origin: str = "user"


class Broker:
    def __init__(self, kernel: Kernel | None = None, hop_ms: int = 5, hops: int = 1):
        self.kernel = kernel
        self.hop_ms = hop_ms
        self.hops = hops
        self._subs: list[tuple[int, str, object]] = []
        self._sub_ids = itertools.count(1)
        self._retained: dict[str, Message] = {}
        self._component = "iot.broker"
        if kernel is not None:
            kernel.register(self._component, self._on_event)

    def subscribe(self, pattern: str, callback) -> int:
        validate_filter(pattern)
        sub_id = next(self._sub_ids)
        self._subs.append((sub_id, pattern, callback))
        for topic in sorted(self._retained):
            message = self._retained[topic]
            if topic_matches(pattern, topic):
                self._dispatch(callback, message)
        return sub_id

    def unsubscribe(self, sub_id: int) -> None:
        self._subs = [s for s in self._subs if s[0] != sub_id]

    def publish(
        self,
        topic: str,
        payload: bytes,
        retained: bool = False,
        origin_ts: int | None = None,
        origin: str = "user",
    ) -> int:
        """Deliver to every matching subscriber in subscription order."""
        validate_topic(topic)
        if origin_ts is None and self.kernel is not None:
            origin_ts = self.kernel.clock
        message = Message(
            topic=topic, payload=payload, retained=retained, origin_ts=origin_ts, origin=origin
        )
        if retained:
            self._retained[topic] = message
        if self.kernel is not None:
            self.kernel.log(
                self._component,
                "published",
                topic=topic,
                payload=payload.decode("utf-8", "replace"),
                retained=retained,
                origin=origin,
            )
        count = 0
        for _, pattern, callback in list(self._subs):
            if topic_matches(pattern, topic):
                self._dispatch(callback, message)
                count += 1
        return count

    def retained_for(self, pattern: str) -> list[Message]:
        validate_filter(pattern)
        return [
            self._retained[topic]
            for topic in sorted(self._retained)
            if topic_matches(pattern, topic)
        ]

    def _dispatch(self, callback, message: Message) -> None:
        if self.kernel is None:
            callback(message)
        else:
            self.kernel.after(
                self.hops * self.hop_ms,
                self._component,
                "deliver",
                {"callback": callback, "message": message},
            )

    def _on_event(self, ev: SimEvent) -> None:
        if ev.kind == "deliver":
            ev.payload["callback"](ev.payload["message"])
        else:
            raise ValueError(f"unexpected event kind for broker: {ev.kind}")
