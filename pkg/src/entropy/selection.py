"""Verifiable, distance-weighted choice of the nodes responsible for a chunk.

A node is eligible for chunk ``h`` when its VRF output ``r`` on ``h`` falls
under a threshold that shrinks geometrically with ring distance:

    d = ring_distance(h, node) / D + 1,   D = 2^hashlen / N
    t = floor(2^m * 2^(hashlen - d))      clamped to [0, 2^hashlen]

so a node ``d`` spacings away is picked with probability ``min(1, 2^(m-d))``.
With ``m = (r_group + 8) / 2`` every node closer than ``m - 1`` spacings is
eligible and the expected group is a little above ``r_group``.
"""

from __future__ import annotations

import asyncio
import bisect
import json
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Awaitable, Callable, Iterable, Sequence

from . import crypto

log = logging.getLogger(__name__)

HASHLEN = 256
_VRF_DOMAIN = b"entropy/select/v1"


@dataclass(frozen=True)
class SelectionParams:
    total_nodes: int
    r_group: int = 80
    scale_exponent: float | None = None
    candidate_count: int | None = None
    hashlen: int = HASHLEN

    def __post_init__(self):
        if self.total_nodes < 1:
            raise ValueError("total_nodes must be positive")
        if self.r_group < 1:
            raise ValueError("r_group must be positive")

    @property
    def m(self) -> Fraction:
        if self.scale_exponent is None:
            return Fraction(self.r_group + 8, 2)
        return Fraction(self.scale_exponent)

    @property
    def candidates(self) -> int:
        c = self.candidate_count if self.candidate_count is not None else 4 * self.r_group
        return min(c, self.total_nodes)


@dataclass(frozen=True)
class SelectionProof:
    chunk_hash: bytes
    pk: bytes
    r: int
    pi: bytes

    @property
    def node_id(self) -> bytes:
        return crypto.node_id(self.pk)


@dataclass(frozen=True)
class Peer:
    node_id: bytes
    pk: bytes
    address: str = ""

    @property
    def position(self) -> int:
        return int.from_bytes(self.node_id, "big")


# -- distance and threshold ---------------------------------------------------

def ring_distance(a: int, b: int, hashlen: int = HASHLEN) -> int:
    size = 1 << hashlen
    diff = (a - b) % size
    return min(diff, size - diff)


def distance(chunk_hash: bytes, node: bytes, total_nodes: int,
             hashlen: int = HASHLEN) -> Fraction:
    """Normalised distance ``d >= 1``; exact, so no float overflow."""
    raw = ring_distance(int.from_bytes(chunk_hash, "big"), int.from_bytes(node, "big"), hashlen)
    return Fraction(raw * total_nodes, 1 << hashlen) + 1


def threshold(d: Fraction | float, params: SelectionParams) -> int:
    """``floor(2^(hashlen + m - d))`` clamped to ``[0, 2^hashlen]``."""
    e = Fraction(params.hashlen) + params.m - Fraction(d)
    if e >= params.hashlen:
        return 1 << params.hashlen
    if e < 0:
        return 0
    whole = math.floor(e)
    # 2^frac carries 53 bits, plenty for a 256-bit comparison in practice
    mant = Fraction(2.0 ** float(e - whole))
    return math.floor(mant * (1 << whole))


def selection_probability(d: Fraction | float, params: SelectionParams) -> float:
    return min(1.0, 2.0 ** float(params.m - Fraction(d)))


def vrf_input(chunk_hash: bytes) -> bytes:
    return _VRF_DOMAIN + chunk_hash


def output_to_r(beta: bytes, hashlen: int = HASHLEN) -> int:
    return int.from_bytes(beta[: hashlen // 8], "big")


# -- proofs -------------------------------------------------------------------

def evaluate(kp: crypto.KeyPair, chunk_hash: bytes, params: SelectionParams) -> tuple[bool, int]:
    """Run the lottery without building a proof; returns (selected, r)."""
    r = output_to_r(crypto.vrf_output(kp, vrf_input(chunk_hash)), params.hashlen)
    d = distance(chunk_hash, kp.node_id, params.total_nodes, params.hashlen)
    return r < threshold(d, params), r


def selection_proof(kp: crypto.KeyPair, chunk_hash: bytes,
                    params: SelectionParams) -> SelectionProof | None:
    """A proof of eligibility for ``chunk_hash``, or None when not selected."""
    selected, _ = evaluate(kp, chunk_hash, params)
    if not selected:
        return None
    beta, pi = crypto.vrf_prove(kp, vrf_input(chunk_hash))
    return SelectionProof(chunk_hash, kp.pk, output_to_r(beta, params.hashlen), pi)


@lru_cache(maxsize=65536)
def _verify_cached(chunk_hash: bytes, pk: bytes, r: int, pi: bytes,
                   params: SelectionParams) -> bool:
    beta = crypto.vrf_verify(pk, vrf_input(chunk_hash), pi)
    if beta is None or output_to_r(beta, params.hashlen) != r:
        return False
    d = distance(chunk_hash, crypto.node_id(pk), params.total_nodes, params.hashlen)
    return r < threshold(d, params)


def verify_selection(chunk_hash: bytes, proof: SelectionProof, params: SelectionParams) -> bool:
    """Check the VRF proof, the output binding and the threshold."""
    if proof.chunk_hash != chunk_hash:
        return False
    if not isinstance(proof.r, int) or not 0 <= proof.r < (1 << params.hashlen):
        return False
    return _verify_cached(chunk_hash, bytes(proof.pk), proof.r, bytes(proof.pi), params)


# -- directories --------------------------------------------------------------

class RingDirectory:
    """In-memory membership sorted by ring position."""

    def __init__(self, peers: Iterable[Peer] = (), hashlen: int = HASHLEN):
        self.hashlen = hashlen
        self._peers: dict[int, Peer] = {}
        self._ring: list[int] = []
        for p in peers:
            self.add(p)

    def __len__(self) -> int:
        return len(self._ring)

    def __contains__(self, node: bytes) -> bool:
        return int.from_bytes(node, "big") in self._peers

    def __iter__(self):
        return (self._peers[pos] for pos in self._ring)

    def add(self, peer: Peer) -> None:
        pos = peer.position
        if pos not in self._peers:
            bisect.insort(self._ring, pos)
        self._peers[pos] = peer

    def remove(self, node: bytes) -> None:
        pos = int.from_bytes(node, "big")
        if self._peers.pop(pos, None) is not None:
            del self._ring[bisect.bisect_left(self._ring, pos)]

    def get(self, node: bytes) -> Peer | None:
        return self._peers.get(int.from_bytes(node, "big"))

    def nearest(self, target: bytes, count: int) -> list[Peer]:
        """The ``count`` peers closest to ``target``, nearest first."""
        n = len(self._ring)
        count = min(count, n)
        if count == 0:
            return []
        t = int.from_bytes(target, "big")
        hi = bisect.bisect_left(self._ring, t)
        lo = hi - 1
        out: list[Peer] = []
        # walk outwards in both directions, merging by distance
        while len(out) < count:
            a = self._ring[hi % n]
            b = self._ring[lo % n]
            da = ring_distance(a, t, self.hashlen)
            db = ring_distance(b, t, self.hashlen)
            if (da, a) <= (db, b):
                out.append(self._peers[a])
                hi += 1
            else:
                out.append(self._peers[b])
                lo -= 1
        return out

    @classmethod
    def from_membership(cls, path: str | Path) -> "RingDirectory":
        return cls(load_membership(path))


def load_membership(path: str | Path) -> list[Peer]:
    """Read ``[{node_id, address, pk}, ...]`` and check each id binding."""
    peers = []
    for entry in json.loads(Path(path).read_text()):
        pk = bytes.fromhex(entry["pk"])
        nid = bytes.fromhex(entry["node_id"])
        if crypto.node_id(pk) != nid:
            raise ValueError(f"membership entry {entry['node_id'][:16]} does not match its key")
        peers.append(Peer(nid, pk, entry.get("address", "")))
    return peers


def save_membership(peers: Sequence[Peer], path: str | Path) -> None:
    rows = [{"node_id": p.node_id.hex(), "address": p.address, "pk": p.pk.hex()} for p in peers]
    Path(path).write_text(json.dumps(rows, indent=2))


# -- locate -------------------------------------------------------------------

ProofRequester = Callable[[Peer, bytes], Awaitable["SelectionProof | None"]]


async def locate(chunk_hash: bytes, directory: RingDirectory, params: SelectionParams,
                 request_proof: ProofRequester,
                 max_inflight: int = 16) -> list[tuple[Peer, SelectionProof]]:
    """Ask the nearest candidates for proofs and keep the verified ones.

    Results are sorted by ring distance. Unreachable or lying candidates are
    dropped silently; an empty directory just yields an empty list.
    """
    candidates = directory.nearest(chunk_hash, params.candidates)
    gate = asyncio.Semaphore(max(1, max_inflight))

    async def ask(peer: Peer):
        async with gate:
            try:
                proof = await request_proof(peer, chunk_hash)
            except (asyncio.TimeoutError, ConnectionError, OSError) as exc:
                log.debug("proof request to %s failed: %s", peer.node_id.hex()[:8], exc)
                return None
        if proof is None or proof.pk != peer.pk:
            return None
        if not verify_selection(chunk_hash, proof, params):
            log.debug("rejected proof from %s", peer.node_id.hex()[:8])
            return None
        return peer, proof

    results = await asyncio.gather(*(ask(p) for p in candidates))
    return [r for r in results if r is not None]
