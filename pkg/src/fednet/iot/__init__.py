"""Building-automation domain: field bus, datapoint codecs, pub/sub, bridge."""

from .knx import (
    AddressInUse,
    BadLink,
    CommissioningRecord,
    Device,
    GroupAddress,
    IndividualAddress,
    InvalidEncoding,
    Link,
    NoResponder,
    OutOfRange,
    Telegram,
    TelegramBus,
    UnknownDpt,
    dpt_decode,
    dpt_encode,
    dpt9_decode,
    dpt9_encode,
    ga_decode,
    ga_encode,
    known_dpts,
)
from .pubsub import BadFilter, Broker, Message, topic_matches, validate_filter
from .hub import AlarmWatcher, Bridge, HvacController

__all__ = [
    "AddressInUse",
    "AlarmWatcher",
    "BadFilter",
    "BadLink",
    "Bridge",
    "Broker",
    "CommissioningRecord",
    "Device",
    "GroupAddress",
    "HvacController",
    "IndividualAddress",
    "InvalidEncoding",
    "Link",
    "Message",
    "NoResponder",
    "OutOfRange",
    "Telegram",
    "TelegramBus",
    "UnknownDpt",
    "dpt_decode",
    "dpt_encode",
    "dpt9_decode",
    "dpt9_encode",
    "ga_decode",
    "ga_encode",
    "known_dpts",
    "topic_matches",
    "validate_filter",
]
