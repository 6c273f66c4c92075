"""Length-prefixed binary framing.

    frame = total_len:u32 | version:u8 | msg_type:u8 | src:32 | dst:32 | payload

``total_len`` counts the whole frame including itself, so an empty payload
gives a 70-byte frame. Payloads are capped at 16 MiB.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

VERSION = 1
HEADER = struct.Struct(">IBB32s32s")
HEADER_LEN = HEADER.size  # 70
MAX_PAYLOAD = 16 * 1024 * 1024


class WireError(Exception):
    pass


@dataclass(frozen=True)
class Envelope:
    msg_type: int
    src: bytes
    dst: bytes
    payload: bytes = b""
    version: int = VERSION


def encode_envelope(env: Envelope) -> bytes:
    if len(env.payload) > MAX_PAYLOAD:
        raise WireError(f"payload of {len(env.payload)} bytes exceeds cap")
    if len(env.src) != 32 or len(env.dst) != 32:
        raise WireError("node ids must be 32 bytes")
    if not 0 <= env.msg_type < 256:
        raise WireError("msg_type must fit a byte")
    total = HEADER_LEN + len(env.payload)
    return HEADER.pack(total, env.version, env.msg_type, env.src, env.dst) + env.payload


def frame_length(prefix: bytes) -> int:
    """Total frame length from the first four bytes; validates bounds."""
    if len(prefix) < 4:
        raise WireError("truncated length prefix")
    total = int.from_bytes(prefix[:4], "big")
    if total < HEADER_LEN:
        raise WireError(f"frame length {total} shorter than header")
    if total - HEADER_LEN > MAX_PAYLOAD:
        raise WireError(f"frame length {total} exceeds cap")
    return total


def decode_envelope(frame: bytes, known_types: frozenset[int] | None = None) -> Envelope:
    if len(frame) < HEADER_LEN:
        raise WireError("truncated header")
    total = frame_length(frame)
    if total != len(frame):
        raise WireError(f"length field {total} but frame has {len(frame)} bytes")
    _, version, msg_type, src, dst = HEADER.unpack_from(frame)
    if version != VERSION:
        raise WireError(f"unsupported version {version}")
    if known_types is not None and msg_type not in known_types:
        raise WireError(f"unknown message type {msg_type:#x}")
    return Envelope(msg_type, src, dst, bytes(frame[HEADER_LEN:]), version)


class FrameBuffer:
    """Reassembles frames from an arbitrary byte stream."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[bytes]:
        self._buf.extend(data)
        frames = []
        while len(self._buf) >= 4:
            total = frame_length(self._buf)
            if len(self._buf) < total:
                break
            frames.append(bytes(self._buf[:total]))
            del self._buf[:total]
        return frames
