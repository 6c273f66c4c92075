"""Many message-level nodes on one simulated network, for scenario runs.

Everything runs on a :class:`VirtualTimeLoop`, so a scenario spanning hours
of protocol time finishes in seconds and replays exactly from its seed.
"""

from __future__ import annotations

import asyncio
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Callable

from .. import crypto
from ..codec import CodecParams
from ..selection import Peer, RingDirectory, SelectionParams
from ..transport import messages as m
from ..transport.simnet import LatencyModel, SimNetwork
from .node import Node
from .state import NodeConfig, ObjectRecipe

log = logging.getLogger(__name__)


@dataclass
class ClusterConfig:
    nodes: int = 60
    codec: CodecParams = field(default_factory=lambda: CodecParams(k_inner=4, r_group=10,
                                                                  k_outer=2, n_chunks=3))
    heartbeat: float = 1.0
    liveness_timeout: float | None = None
    jitter: float | None = None
    sync_interval: float = 5.0
    cache_ttl: float = 0.0
    request_timeout: float = 1.0
    latency: LatencyModel = field(default_factory=LatencyModel)
    byzantine: int = 0
    seed: int = 0


class SimCluster:
    def __init__(self, cfg: ClusterConfig):
        self.cfg = cfg
        self.net = SimNetwork(cfg.latency, seed=cfg.seed)
        self.selection = SelectionParams(total_nodes=cfg.nodes, r_group=cfg.codec.r_group)
        base = cfg.seed * 1_000_003
        keys = [crypto.keypair_from_int(base + i) for i in range(cfg.nodes)]
        self.directory = RingDirectory(Peer(k.node_id, k.pk, k.node_id.hex()) for k in keys)
        byz = set(range(cfg.byzantine))
        self.nodes: dict[bytes, Node] = {}
        for i, kp in enumerate(keys):
            node = Node(kp, self.node_config(byzantine=i in byz), self.directory,
                        address=kp.node_id.hex(), seed=base + i, clock=self._clock)
            self.nodes[node.id] = node
        client_key = crypto.keypair_from_int(base + 999_999)
        self.client = Node(client_key, self.node_config(), self.directory,
                           seed=base + 999_999, clock=self._clock)

    def node_config(self, byzantine: bool = False) -> NodeConfig:
        c = self.cfg
        return NodeConfig(selection=self.selection, codec=c.codec, heartbeat=c.heartbeat,
                          liveness_timeout=c.liveness_timeout, jitter=c.jitter,
                          sync_interval=c.sync_interval, cache_ttl=c.cache_ttl,
                          request_timeout=c.request_timeout, byzantine=byzantine)

    @staticmethod
    def _clock() -> float:
        return asyncio.get_running_loop().time()

    def now(self) -> float:
        return self._clock()

    def start(self) -> None:
        for node in [*self.nodes.values(), self.client]:
            self.net.register(node.id, node.receive)
            node.attach(self.net.send)
        for node in self.nodes.values():
            node.start()

    def stop(self) -> None:
        for node in self.nodes.values():
            node.stop()

    # -- client side ----------------------------------------------------------

    async def store(self, obj: bytes, secret: bytes = b"secret", ttl: float = 1e9) -> ObjectRecipe:
        return await self.client.client_store(obj, secret, self.now() + ttl)

    async def query(self, recipe: ObjectRecipe, secret: bytes = b"secret") -> bytes:
        return await self.client.client_query(recipe, secret)

    # -- fault injection ------------------------------------------------------

    def holders(self, chunk_hash: bytes) -> list[Node]:
        """Live nodes that really hold a fragment of the chunk, ring order."""
        out = [n for n in self.nodes.values() if n.running and chunk_hash in n.stored]
        key = int.from_bytes(chunk_hash, "big")
        from ..selection import ring_distance
        return sorted(out, key=lambda n: ring_distance(int.from_bytes(n.id, "big"), key))

    def fragment_count(self, chunk_hash: bytes, honest_only: bool = False) -> int:
        return sum(len(n.stored[chunk_hash]) for n in self.holders(chunk_hash)
                   if not (honest_only and n.config.byzantine))

    def crash(self, node: Node) -> None:
        """Silent failure: the node stops and its traffic vanishes."""
        node.stop()
        self.net.crash(node.id)

    def evict(self, chunk_hash: bytes, target: Node) -> None:
        """Operator eviction: every holder drops ``target`` and shuns it."""
        msg = m.Evict(chunk_hash, target.id)
        for n in self.holders(chunk_hash):
            if n is not target:
                n.receive(m.to_envelope(msg, self.client.id, n.id))
        target.receive(m.to_envelope(msg, self.client.id, target.id))

    def view_alive(self, chunk_hash: bytes) -> list[int]:
        """Alive-fragment count in each holder's view."""
        now = self.now()
        return [n.views[chunk_hash].alive_fragments(now, n.config.timeout)
                for n in self.holders(chunk_hash) if chunk_hash in n.views]

    async def wait_until(self, predicate: Callable[[], bool], timeout: float,
                         step: float = 0.25) -> float | None:
        """Elapsed virtual time until ``predicate`` holds, or None."""
        start = self.now()
        while self.now() - start <= timeout:
            if predicate():
                return self.now() - start
            await asyncio.sleep(step)
        return None

    def trace_digest(self) -> str:
        return self.net.trace_digest

    def state_digest(self) -> str:
        h = hashlib.sha256()
        for nid in sorted(self.nodes):
            n = self.nodes[nid]
            for chash in sorted(n.stored):
                h.update(nid + chash + repr(sorted(n.stored[chash])).encode())
        return h.hexdigest()
