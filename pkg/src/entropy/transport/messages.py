"""Payload schemas for every message type.

Each message is a dataclass with a fixed ``TYPE`` byte and explicit
``pack``/``unpack`` methods over a tiny big-endian field writer. Variable
length fields carry a u32 length prefix.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import ClassVar

from ..codec import Fragment
from ..selection import SelectionProof
from .wire import Envelope, WireError

_U8 = struct.Struct(">B")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")
_F64 = struct.Struct(">d")


class Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def u8(self, v: int):
        self.parts.append(_U8.pack(v))

    def u32(self, v: int):
        self.parts.append(_U32.pack(v))

    def u64(self, v: int):
        self.parts.append(_U64.pack(v))

    def f64(self, v: float):
        self.parts.append(_F64.pack(v))

    def fixed(self, b: bytes, n: int):
        if len(b) != n:
            raise WireError(f"expected {n} bytes, got {len(b)}")
        self.parts.append(b)

    def blob(self, b: bytes):
        self.u32(len(b))
        self.parts.append(b)

    def text(self, s: str):
        self.blob(s.encode())

    def bytes(self) -> bytes:
        return b"".join(self.parts)


class Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def _take(self, n: int) -> memoryview:
        if self.pos + n > len(self.data):
            raise WireError("truncated payload")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return _U8.unpack(self._take(1))[0]

    def u32(self) -> int:
        return _U32.unpack(self._take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self._take(8))[0]

    def f64(self) -> float:
        return _F64.unpack(self._take(8))[0]

    def fixed(self, n: int) -> bytes:
        return bytes(self._take(n))

    def blob(self) -> bytes:
        return bytes(self._take(self.u32()))

    def text(self) -> str:
        return self.blob().decode()

    def done(self):
        if self.pos != len(self.data):
            raise WireError("trailing bytes in payload")


# -- shared field groups ------------------------------------------------------

def put_fragment(w: Writer, f: Fragment):
    w.fixed(f.chunk_hash, 32)
    w.u64(f.stream_index)
    w.u64(f.chunk_size)
    w.blob(f.data)


def get_fragment(r: Reader) -> Fragment:
    return Fragment(r.fixed(32), r.u64(), r.u64(), r.blob())


def put_proof(w: Writer, p: SelectionProof):
    w.fixed(p.pk, 32)
    w.fixed(p.r.to_bytes(32, "big"), 32)
    w.blob(p.pi)


def get_proof(r: Reader, chunk_hash: bytes) -> SelectionProof:
    pk = r.fixed(32)
    rv = int.from_bytes(r.fixed(32), "big")
    return SelectionProof(chunk_hash, pk, rv, r.blob())


def put_optional_proof(w: Writer, p: SelectionProof | None):
    w.u8(p is not None)
    if p is not None:
        put_proof(w, p)


def get_optional_proof(r: Reader, chunk_hash: bytes) -> SelectionProof | None:
    return get_proof(r, chunk_hash) if r.u8() else None


@dataclass
class MemberEntry:
    """One row of a membership view as it travels on the wire."""

    node_id: bytes
    address: str
    indices: tuple[int, ...]
    proof: SelectionProof
    last_claim: float = 0.0

    def pack(self, w: Writer):
        w.fixed(self.node_id, 32)
        w.text(self.address)
        w.u32(len(self.indices))
        for i in self.indices:
            w.u64(i)
        put_proof(w, self.proof)
        w.f64(self.last_claim)

    @classmethod
    def unpack(cls, r: Reader, chunk_hash: bytes) -> "MemberEntry":
        nid = r.fixed(32)
        addr = r.text()
        indices = tuple(r.u64() for _ in range(r.u32()))
        proof = get_proof(r, chunk_hash)
        return cls(nid, addr, indices, proof, r.f64())


def put_members(w: Writer, members: list[MemberEntry]):
    w.u32(len(members))
    for m in members:
        m.pack(w)


def get_members(r: Reader, chunk_hash: bytes) -> list[MemberEntry]:
    return [MemberEntry.unpack(r, chunk_hash) for _ in range(r.u32())]


# -- messages -----------------------------------------------------------------

class Message:
    TYPE: ClassVar[int]

    def pack(self, w: Writer) -> None:
        raise NotImplementedError

    @classmethod
    def unpack(cls, r: Reader) -> "Message":
        raise NotImplementedError


@dataclass
class StoreFragment(Message):
    TYPE: ClassVar[int] = 0x01
    req_id: int
    fragment: Fragment
    expiration: float

    def pack(self, w):
        w.u64(self.req_id)
        put_fragment(w, self.fragment)
        w.f64(self.expiration)

    @classmethod
    def unpack(cls, r):
        return cls(r.u64(), get_fragment(r), r.f64())


@dataclass
class StoreAck(Message):
    """Answer to a store or repair request; ``status`` says which case."""

    TYPE: ClassVar[int] = 0x02
    req_id: int
    chunk_hash: bytes
    ok: bool
    status: str
    proof: SelectionProof | None = None
    indices: tuple[int, ...] = ()

    def pack(self, w):
        w.u64(self.req_id)
        w.fixed(self.chunk_hash, 32)
        w.u8(self.ok)
        w.text(self.status)
        put_optional_proof(w, self.proof)
        w.u32(len(self.indices))
        for i in self.indices:
            w.u64(i)

    @classmethod
    def unpack(cls, r):
        req_id, chash = r.u64(), r.fixed(32)
        ok, status = bool(r.u8()), r.text()
        proof = get_optional_proof(r, chash)
        indices = tuple(r.u64() for _ in range(r.u32()))
        return cls(req_id, chash, ok, status, proof, indices)


@dataclass
class GetFragment(Message):
    TYPE: ClassVar[int] = 0x03
    req_id: int
    chunk_hash: bytes
    exclude: tuple[int, ...] = ()

    def pack(self, w):
        w.u64(self.req_id)
        w.fixed(self.chunk_hash, 32)
        w.u32(len(self.exclude))
        for i in self.exclude:
            w.u64(i)

    @classmethod
    def unpack(cls, r):
        req_id, chash = r.u64(), r.fixed(32)
        return cls(req_id, chash, tuple(r.u64() for _ in range(r.u32())))


@dataclass
class FragmentData(Message):
    TYPE: ClassVar[int] = 0x04
    req_id: int
    chunk_hash: bytes
    fragment: Fragment | None

    def pack(self, w):
        w.u64(self.req_id)
        w.fixed(self.chunk_hash, 32)
        w.u8(self.fragment is not None)
        if self.fragment is not None:
            put_fragment(w, self.fragment)

    @classmethod
    def unpack(cls, r):
        req_id, chash = r.u64(), r.fixed(32)
        return cls(req_id, chash, get_fragment(r) if r.u8() else None)


@dataclass
class ProofRequest(Message):
    TYPE: ClassVar[int] = 0x05
    req_id: int
    chunk_hash: bytes

    def pack(self, w):
        w.u64(self.req_id)
        w.fixed(self.chunk_hash, 32)

    @classmethod
    def unpack(cls, r):
        return cls(r.u64(), r.fixed(32))


@dataclass
class ProofResponse(Message):
    """Selection proof, plus the fragment indices the responder holds."""

    TYPE: ClassVar[int] = 0x06
    req_id: int
    chunk_hash: bytes
    proof: SelectionProof | None
    indices: tuple[int, ...] = ()

    def pack(self, w):
        w.u64(self.req_id)
        w.fixed(self.chunk_hash, 32)
        put_optional_proof(w, self.proof)
        w.u32(len(self.indices))
        for i in self.indices:
            w.u64(i)

    @classmethod
    def unpack(cls, r):
        req_id, chash = r.u64(), r.fixed(32)
        proof = get_optional_proof(r, chash)
        return cls(req_id, chash, proof, tuple(r.u64() for _ in range(r.u32())))


@dataclass
class PersistenceClaim(Message):
    TYPE: ClassVar[int] = 0x07
    chunk_hash: bytes
    stream_index: int
    proof: SelectionProof
    timestamp: float
    signature: bytes = b""

    def signed_bytes(self) -> bytes:
        w = Writer()
        w.fixed(self.chunk_hash, 32)
        w.u64(self.stream_index)
        put_proof(w, self.proof)
        w.f64(self.timestamp)
        return b"entropy/claim/v1" + w.bytes()

    def pack(self, w):
        w.fixed(self.chunk_hash, 32)
        w.u64(self.stream_index)
        put_proof(w, self.proof)
        w.f64(self.timestamp)
        w.fixed(self.signature, 64)

    @classmethod
    def unpack(cls, r):
        chash = r.fixed(32)
        idx = r.u64()
        proof = get_proof(r, chash)
        return cls(chash, idx, proof, r.f64(), r.fixed(64))


@dataclass
class RepairRequest(Message):
    TYPE: ClassVar[int] = 0x08
    req_id: int
    chunk_hash: bytes
    expiration: float
    view: list[MemberEntry] = field(default_factory=list)

    def pack(self, w):
        w.u64(self.req_id)
        w.fixed(self.chunk_hash, 32)
        w.f64(self.expiration)
        put_members(w, self.view)

    @classmethod
    def unpack(cls, r):
        req_id, chash, exp = r.u64(), r.fixed(32), r.f64()
        return cls(req_id, chash, exp, get_members(r, chash))


@dataclass
class ChunkCacheRequest(Message):
    """Ask a member for a fragment at ``stream_index`` built from its cache."""

    TYPE: ClassVar[int] = 0x09
    req_id: int
    chunk_hash: bytes
    stream_index: int

    def pack(self, w):
        w.u64(self.req_id)
        w.fixed(self.chunk_hash, 32)
        w.u64(self.stream_index)

    @classmethod
    def unpack(cls, r):
        return cls(r.u64(), r.fixed(32), r.u64())


@dataclass
class ChunkCacheResponse(Message):
    TYPE: ClassVar[int] = 0x0A
    req_id: int
    chunk_hash: bytes
    fragment: Fragment | None

    def pack(self, w):
        w.u64(self.req_id)
        w.fixed(self.chunk_hash, 32)
        w.u8(self.fragment is not None)
        if self.fragment is not None:
            put_fragment(w, self.fragment)

    @classmethod
    def unpack(cls, r):
        req_id, chash = r.u64(), r.fixed(32)
        return cls(req_id, chash, get_fragment(r) if r.u8() else None)


@dataclass
class MembershipPush(Message):
    TYPE: ClassVar[int] = 0x0B
    chunk_hash: bytes
    expiration: float
    members: list[MemberEntry] = field(default_factory=list)

    def pack(self, w):
        w.fixed(self.chunk_hash, 32)
        w.f64(self.expiration)
        put_members(w, self.members)

    @classmethod
    def unpack(cls, r):
        chash, exp = r.fixed(32), r.f64()
        return cls(chash, exp, get_members(r, chash))


# control plane, used by operators and the deployment smoke test

@dataclass
class Evict(Message):
    """Drop ``target`` from this node's view of a chunk and shun its claims."""

    TYPE: ClassVar[int] = 0x20
    chunk_hash: bytes
    target: bytes

    def pack(self, w):
        w.fixed(self.chunk_hash, 32)
        w.fixed(self.target, 32)

    @classmethod
    def unpack(cls, r):
        return cls(r.fixed(32), r.fixed(32))


@dataclass
class ViewRequest(Message):
    TYPE: ClassVar[int] = 0x21
    req_id: int
    chunk_hash: bytes

    def pack(self, w):
        w.u64(self.req_id)
        w.fixed(self.chunk_hash, 32)

    @classmethod
    def unpack(cls, r):
        return cls(r.u64(), r.fixed(32))


@dataclass
class ViewResponse(Message):
    TYPE: ClassVar[int] = 0x22
    req_id: int
    chunk_hash: bytes
    now: float
    members: list[MemberEntry] = field(default_factory=list)

    def pack(self, w):
        w.u64(self.req_id)
        w.fixed(self.chunk_hash, 32)
        w.f64(self.now)
        put_members(w, self.members)

    @classmethod
    def unpack(cls, r):
        req_id, chash, now = r.u64(), r.fixed(32), r.f64()
        return cls(req_id, chash, now, get_members(r, chash))


@dataclass
class Hello(Message):
    """First frame on an outbound socket: where the sender listens."""

    TYPE: ClassVar[int] = 0x23
    address: str

    def pack(self, w):
        w.text(self.address)

    @classmethod
    def unpack(cls, r):
        return cls(r.text())


MESSAGE_TYPES: dict[int, type[Message]] = {
    cls.TYPE: cls for cls in (
        StoreFragment, StoreAck, GetFragment, FragmentData, ProofRequest,
        ProofResponse, PersistenceClaim, RepairRequest, ChunkCacheRequest,
        ChunkCacheResponse, MembershipPush, Evict, ViewRequest, ViewResponse, Hello,
    )
}
KNOWN_TYPES = frozenset(MESSAGE_TYPES)


def encode_payload(msg: Message) -> bytes:
    w = Writer()
    msg.pack(w)
    return w.bytes()


def decode_payload(msg_type: int, payload: bytes) -> Message:
    cls = MESSAGE_TYPES.get(msg_type)
    if cls is None:
        raise WireError(f"unknown message type {msg_type:#x}")
    r = Reader(payload)
    msg = cls.unpack(r)
    r.done()
    return msg


def to_envelope(msg: Message, src: bytes, dst: bytes) -> Envelope:
    return Envelope(msg.TYPE, src, dst, encode_payload(msg))


def from_envelope(env: Envelope) -> Message:
    return decode_payload(env.msg_type, env.payload)
