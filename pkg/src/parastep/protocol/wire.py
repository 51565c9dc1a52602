"""Bit-exact message framing for the step-parallel protocol.

Frame layout, all integers little-endian:

    magic "PSTP" (4 bytes) | version (1 byte, = 1) | msg_type (1 byte) |
    sender_rank (2 bytes)  | step (4 bytes) | payload element count (4 bytes) |
    payload (count IEEE-754 binary64 values)

decode_message(encode_message(m)) == m exactly, including payload bits.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import FrameError, ParameterError

MAGIC = b"PSTP"
VERSION = 1

MSG_NOISE = 0
MSG_SAMPLE_BCAST = 1
MSG_HELLO = 2
MSG_SHUTDOWN = 3
MSG_NAMES = {
    MSG_NOISE: "NOISE",
    MSG_SAMPLE_BCAST: "SAMPLE_BCAST",
    MSG_HELLO: "HELLO",
    MSG_SHUTDOWN: "SHUTDOWN",
}

_HEADER = struct.Struct("<4sBBHII")
HEADER_BYTES = _HEADER.size  # 16


def _empty_payload() -> np.ndarray:
    return np.empty(0, dtype=np.float64)


@dataclass
class WireMessage:
    msg_type: int
    sender_rank: int
    step: int
    payload: np.ndarray = field(default_factory=_empty_payload)

    def __eq__(self, other) -> bool:
        if not isinstance(other, WireMessage):
            return NotImplemented
        return (
            self.msg_type == other.msg_type
            and self.sender_rank == other.sender_rank
            and self.step == other.step
            and np.array_equal(self.payload, other.payload)
        )


def encode_message(m: WireMessage) -> bytes:
    if m.msg_type not in MSG_NAMES:
        raise ParameterError(f"unknown message type {m.msg_type}")
    if not 0 <= m.sender_rank < 2**16:
        raise ParameterError(f"sender_rank {m.sender_rank} does not fit in 16 bits")
    if not 0 <= m.step < 2**32:
        raise ParameterError(f"step {m.step} does not fit in 32 bits")
    payload = np.asarray(m.payload, dtype="<f8")
    header = _HEADER.pack(MAGIC, VERSION, m.msg_type, m.sender_rank, m.step, len(payload))
    return header + payload.tobytes()


def decode_message(data: bytes) -> WireMessage:
    if len(data) < HEADER_BYTES:
        raise FrameError(f"frame of {len(data)} bytes is shorter than the header", offset=len(data))
    magic, version, msg_type, sender_rank, step, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FrameError(f"bad magic bytes {magic!r}", offset=0)
    if version != VERSION:
        raise FrameError(f"unsupported format version {version}", offset=4)
    if msg_type not in MSG_NAMES:
        raise FrameError(f"unknown message type {msg_type}", offset=5)
    if len(data) != HEADER_BYTES + 8 * count:
        raise FrameError(
            f"header promises {count} payload elements ({8 * count} bytes), "
            f"frame carries {len(data) - HEADER_BYTES}",
            offset=HEADER_BYTES,
        )
    payload = np.frombuffer(data, dtype="<f8", count=count, offset=HEADER_BYTES).copy()
    return WireMessage(msg_type, sender_rank, step, payload)


def payload_count(header: bytes) -> int:
    """Element count from a raw 16-byte header (for streaming receives)."""
    if len(header) < HEADER_BYTES:
        raise FrameError("short header", offset=len(header))
    return struct.unpack_from("<I", header, 12)[0]
