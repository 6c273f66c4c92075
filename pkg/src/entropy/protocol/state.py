"""Node-local state: configuration, stored fragments and group views."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..codec import CodecParams, Fragment
from ..selection import SelectionParams, SelectionProof
from ..transport.messages import MemberEntry


@dataclass(frozen=True)
class NodeConfig:
    selection: SelectionParams
    codec: CodecParams = CodecParams()
    heartbeat: float = 30.0
    liveness_timeout: float | None = None
    sync_interval: float = 300.0
    cache_ttl: float = 0.0
    jitter: float | None = None
    request_timeout: float = 5.0
    locate_rounds: int = 3
    max_inflight: int = 16
    capacity_bytes: int | None = None
    byzantine: bool = False
    join_attempts: int = 5

    def __post_init__(self):
        if self.heartbeat <= 0:
            raise ValueError("heartbeat must be positive")
        if self.timeout <= self.heartbeat:
            raise ValueError("liveness_timeout must exceed the heartbeat interval")
        if self.selection.r_group != self.codec.r_group:
            raise ValueError("selection and codec disagree on r_group")

    @property
    def timeout(self) -> float:
        return self.liveness_timeout if self.liveness_timeout is not None else 3 * self.heartbeat

    @property
    def jitter_window(self) -> float:
        return self.jitter if self.jitter is not None else self.heartbeat


@dataclass
class StoredFragment:
    fragment: Fragment
    proof: SelectionProof
    received_at: float
    expiration: float


@dataclass
class MemberInfo:
    pk: bytes
    proof: SelectionProof
    address: str = ""
    indices: set[int] = field(default_factory=set)
    last_claim: float = 0.0
    claim_ts: float = -math.inf


class GroupView:
    """What one member believes about its chunk group.

    Members are keyed by NodeId; a member may hold several fragments when the
    group has fewer eligible nodes than ``r_group``. Liveness counts
    fragments, since that is what durability depends on.
    """

    def __init__(self, chunk_hash: bytes, owner: bytes):
        self.chunk_hash = chunk_hash
        self.owner = owner
        self.members: dict[bytes, MemberInfo] = {}

    def __contains__(self, node: bytes) -> bool:
        return node in self.members

    def upsert(self, node: bytes, proof: SelectionProof, now: float,
               indices=(), address: str = "", refresh: bool = True) -> MemberInfo:
        info = self.members.get(node)
        if info is None:
            info = MemberInfo(proof.pk, proof, address, set(), now)
            self.members[node] = info
        info.indices.update(indices)
        if address:
            info.address = address
        if refresh:
            info.last_claim = max(info.last_claim, now)
        return info

    def is_alive(self, node: bytes, now: float, timeout: float) -> bool:
        if node == self.owner:
            return True
        info = self.members.get(node)
        return info is not None and now - info.last_claim <= timeout

    def alive_members(self, now: float, timeout: float) -> list[bytes]:
        return [n for n in self.members if self.is_alive(n, now, timeout)]

    def alive_fragments(self, now: float, timeout: float) -> int:
        return sum(len(self.members[n].indices) for n in self.alive_members(now, timeout))

    def expire(self, now: float, timeout: float) -> list[bytes]:
        gone = [n for n in self.members if not self.is_alive(n, now, timeout)]
        for n in gone:
            del self.members[n]
        return gone

    def remove(self, node: bytes) -> None:
        self.members.pop(node, None)

    def all_indices(self) -> set[int]:
        out: set[int] = set()
        for info in self.members.values():
            out |= info.indices
        return out

    def entries(self) -> list[MemberEntry]:
        return [MemberEntry(n, i.address, tuple(sorted(i.indices)), i.proof, i.last_claim)
                for n, i in self.members.items()]


@dataclass(frozen=True)
class ObjectRecipe:
    """What a client needs to fetch an object back.

    ``chunk_hashes`` is positional; a ``None`` entry marks a chunk the
    holder of the recipe has forgotten, which the query simply skips.
    """

    object_hash: bytes
    chunk_hashes: tuple[bytes | None, ...]
    expiration: float
    params: CodecParams = CodecParams()

    def __post_init__(self):
        if len(self.chunk_hashes) != self.params.n_chunks:
            raise ValueError("recipe must list n_chunks chunk hashes")

    def without(self, positions) -> "ObjectRecipe":
        drop = set(positions)
        hashes = tuple(None if i in drop else h for i, h in enumerate(self.chunk_hashes))
        return ObjectRecipe(self.object_hash, hashes, self.expiration, self.params)

    def to_json(self) -> str:
        return json.dumps({
            "object_hash": self.object_hash.hex(),
            "chunk_hashes": [h.hex() if h is not None else None for h in self.chunk_hashes],
            "expiration": self.expiration,
            "params": asdict(self.params),
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ObjectRecipe":
        raw = json.loads(text)
        return cls(bytes.fromhex(raw["object_hash"]),
                   tuple(bytes.fromhex(h) if h is not None else None for h in raw["chunk_hashes"]),
                   float(raw["expiration"]),
                   CodecParams(**raw.get("params", {})))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "ObjectRecipe":
        return cls.from_json(Path(path).read_text())


@dataclass
class NodeMetrics:
    stored: int = 0
    claims_sent: int = 0
    claims_accepted: int = 0
    claims_rejected: int = 0
    repairs_started: int = 0
    repair_requests_sent: int = 0
    joins_completed: int = 0
    repair_fragments_in: int = 0
    cache_hits: int = 0
    cache_misses: int = 0
    cache_served: int = 0
    fragments_served: int = 0
