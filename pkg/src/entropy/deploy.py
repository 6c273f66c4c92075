"""Local deployment: real nodes over TCP, driven by files in one directory.

Layout of a deployment directory::

    deploy.json        protocol timings and code parameters
    membership.json    [{node_id, address, pk}, ...] for every node
    keys/node-NNN.key  raw 32-byte seed of each node's signing key

Every process (node or client) reads the same files, so a deployment is
fully described by its directory.
"""

from __future__ import annotations

import asyncio
import json
import logging
import signal
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import crypto
from .codec import CodecParams
from .protocol import Node, NodeConfig, ObjectRecipe
from .selection import Peer, RingDirectory, SelectionParams, load_membership, save_membership
from .transport import messages as m
from .transport.sockets import SocketTransport, split_address

log = logging.getLogger(__name__)

DEPLOY_FILE = "deploy.json"
MEMBERSHIP_FILE = "membership.json"


@dataclass(frozen=True)
class DeployConfig:
    codec: CodecParams = field(default_factory=lambda: CodecParams(k_inner=8, r_group=16,
                                                                  k_outer=8, n_chunks=10))
    heartbeat: float = 1.0
    liveness_timeout: float | None = None
    sync_interval: float = 10.0
    cache_ttl: float = 0.0
    request_timeout: float = 5.0

    def node_config(self, total_nodes: int) -> NodeConfig:
        sel = SelectionParams(total_nodes=total_nodes, r_group=self.codec.r_group)
        return NodeConfig(selection=sel, codec=self.codec, heartbeat=self.heartbeat,
                          liveness_timeout=self.liveness_timeout, sync_interval=self.sync_interval,
                          cache_ttl=self.cache_ttl, request_timeout=self.request_timeout)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "DeployConfig":
        raw = json.loads(Path(path).read_text())
        raw["codec"] = CodecParams(**raw.get("codec", {}))
        return cls(**raw)


def key_path(root: Path, index: int) -> Path:
    return root / "keys" / f"node-{index:03d}.key"


def init_deployment(root: str | Path, count: int, host: str = "127.0.0.1", base_port: int = 9000,
                    cfg: DeployConfig = DeployConfig(), seed: int | None = None) -> list[Peer]:
    """Write keys, membership and config for ``count`` local nodes.

    With ``seed`` the keys are reproducible; otherwise they come from the OS.
    """
    root = Path(root)
    (root / "keys").mkdir(parents=True, exist_ok=True)
    peers = []
    for i in range(count):
        kp = crypto.keypair_from_int(seed * 1_000_003 + i) if seed is not None else crypto.keygen()
        crypto.save_key(kp, key_path(root, i))
        peers.append(Peer(kp.node_id, kp.pk, f"{host}:{base_port + i}"))
    save_membership(peers, root / MEMBERSHIP_FILE)
    cfg.save(root / DEPLOY_FILE)
    return peers


class Deployment:
    """Parsed deployment directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.cfg = DeployConfig.load(self.root / DEPLOY_FILE)
        self.peers = load_membership(self.root / MEMBERSHIP_FILE)
        self.directory = RingDirectory(self.peers)

    def node_config(self) -> NodeConfig:
        return self.cfg.node_config(len(self.peers))

    def resolve(self, node_id: bytes) -> str | None:
        peer = self.directory.get(node_id)
        return peer.address if peer is not None else None


async def _attach(node: Node, dep: Deployment, host: str, port: int) -> SocketTransport:
    transport = SocketTransport(node.id, host, port, dep.resolve, node.receive)
    await transport.start()
    node.address = transport.address
    node.attach(transport.send)
    return transport


async def serve_node(root: str | Path, index: int, stop: asyncio.Event | None = None) -> None:
    """Run node ``index`` of the deployment until ``stop`` is set or SIGTERM."""
    dep = Deployment(root)
    kp = crypto.load_key(key_path(dep.root, index))
    peer = dep.directory.get(kp.node_id)
    if peer is None:
        raise ValueError(f"key {index} is not in the membership file")
    host, port = split_address(peer.address)
    node = Node(kp, dep.node_config(), dep.directory, address=peer.address, seed=index)
    transport = await _attach(node, dep, host, port)
    node.start()
    stop = stop or asyncio.Event()
    loop = asyncio.get_running_loop()
    for sig in (signal.SIGTERM, signal.SIGINT):
        try:
            loop.add_signal_handler(sig, stop.set)
        except (NotImplementedError, RuntimeError):
            pass
    log.info("node %d (%s) serving on %s", index, kp.node_id.hex()[:12], transport.address)
    try:
        await stop.wait()
    finally:
        node.stop()
        await transport.close()


class Client:
    """A transient node with a fresh key that stores, queries and inspects."""

    def __init__(self, root: str | Path, host: str = "127.0.0.1"):
        self.dep = Deployment(root)
        self.host = host
        self.node = Node(crypto.keygen(), self.dep.node_config(), self.dep.directory)
        self.transport: SocketTransport | None = None

    async def __aenter__(self) -> "Client":
        self.transport = await _attach(self.node, self.dep, self.host, 0)
        return self

    async def __aexit__(self, *exc) -> None:
        if self.transport is not None:
            await self.transport.close()

    async def store(self, data: bytes, secret: bytes, ttl: float) -> ObjectRecipe:
        return await self.node.client_store(data, secret, time.time() + ttl)

    async def query(self, recipe: ObjectRecipe, secret: bytes) -> bytes:
        return await self.node.client_query(recipe, secret)

    async def group(self, chunk_hash: bytes) -> dict[bytes, m.MemberEntry]:
        """Union of the alive members reported by every located holder.

        For each member the entry with the freshest claim is kept.
        """
        located = await self.node.locate(chunk_hash)
        holders = [loc.peer.node_id for loc in located if loc.indices]
        replies = await asyncio.gather(*(self.node.request(h, m.ViewRequest(0, chunk_hash))
                                         for h in holders))
        out: dict[bytes, m.MemberEntry] = {}
        for reply in replies:
            if reply is None:
                continue
            for e in reply.members:
                cur = out.get(e.node_id)
                if cur is None or e.last_claim > cur.last_claim:
                    out[e.node_id] = e
        return out

    async def alive_fragments(self, chunk_hash: bytes) -> int:
        return sum(len(e.indices) for e in (await self.group(chunk_hash)).values())

    async def evict(self, chunk_hash: bytes, target: bytes | None = None) -> bytes | None:
        """Tell every holder to drop ``target``, by default the oldest member.

        The oldest member holds the lowest stream index: the original store
        numbers fragments from 0 while repairs draw indices from 2^32 up.
        """
        members = await self.group(chunk_hash)
        if not members:
            return None
        if target is None:
            held = [e for e in members.values() if e.indices]
            if not held:
                return None
            target = min(held, key=lambda e: (min(e.indices), e.node_id)).node_id
        msg = m.Evict(chunk_hash, target)
        for nid in sorted(set(members) | {target}):
            if nid != target:
                self.node.send(nid, msg)
        self.node.send(target, msg)
        return target
