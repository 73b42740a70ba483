"""
UDP Packet Codec.

Every datagram is a 12-byte header followed by a fixed payload, all fields
little-endian:

    header       magic u32 = 0x48434349 | version u8 = 1 | msg_type u8 |
                 reserved u16 = 0 | seq u32
    measurement  cycle u32 | imep, ca50, nox, mprr, r_imep, r_ca50 f64   (64 bytes)
    actuation    cycle u32 | doi_fuel, doi_water, nvo f64 |
                 solve_time_us u32 | status u8 | reserved 3 bytes        (48 bytes)
    heartbeat    cycle u32 | reserved u32                                (20 bytes)

Decoding checks the header before touching the payload, so a bad packet is
rejected with its own error and never partially decoded.
"""

from __future__ import annotations

import math
import struct
from dataclasses import astuple, dataclass

from lstm_nmpc.errors import (
    BadMagicError,
    BadVersionError,
    PacketLengthError,
    TruncatedPacketError,
    UnknownMessageTypeError,
    WireValueError,
)

MAGIC = 0x48434349
PROTOCOL_VERSION = 1
HEADER = struct.Struct("<IBBHI")
MEASUREMENT = struct.Struct("<I6d")
ACTUATION = struct.Struct("<I3dIB3x")
HEARTBEAT = struct.Struct("<II")

MSG_MEASUREMENT = 1
MSG_ACTUATION = 2
MSG_HEARTBEAT = 3

STATUS_OK = 0
STATUS_DEGRADED = 1
STATUS_FALLBACK = 2
STATUSES = (STATUS_OK, STATUS_DEGRADED, STATUS_FALLBACK)

U32_MAX = 2**32 - 1


@dataclass(frozen=True)
class MeasurementMsg:
    """Plant to controller: measured outputs of `cycle` and the next reference."""

    seq: int
    cycle: int
    imep: float
    ca50: float
    nox: float
    mprr: float
    r_imep: float
    r_ca50: float


@dataclass(frozen=True)
class ActuationMsg:
    """Controller to plant: actuation for the cycle after `cycle`."""

    seq: int
    cycle: int
    doi_fuel: float
    doi_water: float
    nvo: float
    solve_time_us: int
    status: int = STATUS_OK


@dataclass(frozen=True)
class HeartbeatMsg:
    """Controller liveness signal carrying the last handled cycle."""

    seq: int
    cycle: int


_LAYOUTS = {
    MSG_MEASUREMENT: (MeasurementMsg, MEASUREMENT),
    MSG_ACTUATION: (ActuationMsg, ACTUATION),
    MSG_HEARTBEAT: (HeartbeatMsg, HEARTBEAT),
}
_TYPES = {cls: (msg_type, layout) for msg_type, (cls, layout) in _LAYOUTS.items()}


def packet_length(msg_type: int) -> int:
    return HEADER.size + _LAYOUTS[msg_type][1].size


def _check_u32(name: str, value: int) -> None:
    if not isinstance(value, int) or not 0 <= value <= U32_MAX:
        raise WireValueError(f"{name}={value!r} does not fit in u32")


def _check_finite(msg) -> None:
    for name, value in zip(type(msg).__dataclass_fields__, astuple(msg)):
        if isinstance(value, float) and not math.isfinite(value):
            raise WireValueError(f"{name} is not finite")


def encode(msg) -> bytes:
    """
    Serialise a message into one datagram.

    Raises:
        WireValueError: If a float is non-finite, an integer does not fit its
            field or the status code is unknown.
    """
    if type(msg) not in _TYPES:
        raise WireValueError(f"cannot encode {type(msg).__name__}")
    msg_type, layout = _TYPES[type(msg)]
    _check_u32("seq", msg.seq)
    _check_u32("cycle", msg.cycle)
    _check_finite(msg)
    if isinstance(msg, ActuationMsg):
        _check_u32("solve_time_us", msg.solve_time_us)
        if msg.status not in STATUSES:
            raise WireValueError(f"unknown status {msg.status}")
    values = astuple(msg)[1:]
    if isinstance(msg, HeartbeatMsg):
        values = (msg.cycle, 0)
    header = HEADER.pack(MAGIC, PROTOCOL_VERSION, msg_type, 0, msg.seq)
    return header + layout.pack(*values)


def decode(data: bytes):
    """
    Parse one datagram.

    Raises:
        TruncatedPacketError: Shorter than the header or the type's payload.
        BadMagicError / BadVersionError / UnknownMessageTypeError: Bad header.
        PacketLengthError: Longer than the type allows.
        WireValueError: Payload carries non-finite floats or an unknown status.
    """
    if len(data) < HEADER.size:
        raise TruncatedPacketError(f"{len(data)} bytes is shorter than the header")
    magic, version, msg_type, _, seq = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic 0x{magic:08x}")
    if version != PROTOCOL_VERSION:
        raise BadVersionError(f"protocol version {version} is not supported")
    if msg_type not in _LAYOUTS:
        raise UnknownMessageTypeError(f"unknown message type {msg_type}")
    cls, layout = _LAYOUTS[msg_type]
    expected = HEADER.size + layout.size
    if len(data) < expected:
        raise TruncatedPacketError(f"type {msg_type} needs {expected} bytes, got {len(data)}")
    if len(data) > expected:
        raise PacketLengthError(f"type {msg_type} needs {expected} bytes, got {len(data)}")
    values = layout.unpack_from(data, HEADER.size)
    if cls is HeartbeatMsg:
        values = values[:1]
    msg = cls(seq, *values)
    _check_finite(msg)
    if isinstance(msg, ActuationMsg) and msg.status not in STATUSES:
        raise WireValueError(f"unknown status {msg.status}")
    return msg
