"""A storage node: server handlers, group maintenance, repair, and the client
operations (store / query) that any node can run.

All handlers run on one asyncio loop per node. The transport only needs a
synchronous ``send(envelope)``; replies are matched to requests by id.
"""

from __future__ import annotations

import asyncio
import itertools
import logging
import random
import time
from dataclasses import dataclass
from typing import Callable, Sequence

from .. import codec, crypto, selection
from ..codec import Chunk, CodecError, Fragment, IntegrityError, NeedMoreSymbols
from ..selection import Peer, RingDirectory, SelectionProof
from ..transport import messages as m
from ..transport.simnet import TransportError
from ..transport.wire import Envelope, WireError
from .state import GroupView, NodeConfig, NodeMetrics, ObjectRecipe, StoredFragment

log = logging.getLogger(__name__)

_RESPONSES = (m.StoreAck, m.FragmentData, m.ProofResponse, m.ChunkCacheResponse, m.ViewResponse)


class StoreError(Exception):
    def __init__(self, progress: dict[bytes, int]):
        short = {h.hex()[:12]: n for h, n in progress.items()}
        super().__init__(f"store incomplete, fragments stored per chunk: {short}")
        self.progress = progress


class ObjectUnavailable(Exception):
    def __init__(self, status: dict[bytes, str]):
        short = {h.hex()[:12]: s for h, s in status.items()}
        super().__init__(f"object unavailable, chunk status: {short}")
        self.status = status


@dataclass(frozen=True)
class Located:
    peer: Peer
    proof: SelectionProof
    indices: tuple[int, ...]


class Node:
    def __init__(self, keypair: crypto.KeyPair, config: NodeConfig, directory: RingDirectory,
                 send: Callable[[Envelope], None] | None = None, *, address: str = "",
                 seed: int = 0, clock: Callable[[], float] | None = None):
        self.kp = keypair
        self.id = keypair.node_id
        self.config = config
        self.directory = directory
        self.address = address
        self._send = send
        self.clock = clock or time.time
        self.rng = random.Random(seed)
        self.metrics = NodeMetrics()

        self.stored: dict[bytes, dict[int, StoredFragment]] = {}
        self.views: dict[bytes, GroupView] = {}
        self.cache: dict[bytes, tuple[bytes, float]] = {}
        self.evicted: dict[bytes, set[bytes]] = {}
        self._proofs: dict[bytes, SelectionProof | None] = {}
        self._pending: dict[int, asyncio.Future] = {}
        self._ids = itertools.count(1)
        self._joining: set[bytes] = set()
        self._repair_scheduled: set[bytes] = set()
        self._repair_until: dict[bytes, float] = {}
        self._tasks: set[asyncio.Task] = set()
        self.running = False

    # -- plumbing -------------------------------------------------------------

    def now(self) -> float:
        return self.clock()

    def attach(self, send: Callable[[Envelope], None]) -> None:
        self._send = send

    def start(self) -> None:
        self.running = True
        self._spawn(self._heartbeat_loop())
        self._spawn(self._sync_loop())

    def stop(self) -> None:
        self.running = False
        for t in list(self._tasks):
            t.cancel()
        for fut in self._pending.values():
            if not fut.done():
                fut.cancel()
        self._pending.clear()

    def _spawn(self, coro) -> asyncio.Task:
        task = asyncio.get_running_loop().create_task(coro)
        self._tasks.add(task)
        task.add_done_callback(self._task_done)
        return task

    def _task_done(self, task: asyncio.Task) -> None:
        self._tasks.discard(task)
        if not task.cancelled() and task.exception() is not None:
            log.error("node %s task failed", self.id.hex()[:8], exc_info=task.exception())

    def send(self, dst: bytes, msg: m.Message) -> bool:
        if self._send is None:
            raise RuntimeError("node is not attached to a transport")
        try:
            self._send(m.to_envelope(msg, self.id, dst))
            return True
        except TransportError as exc:
            log.debug("send to %s failed: %s", dst.hex()[:8], exc)
            return False

    async def request(self, dst: bytes, msg: m.Message, timeout: float | None = None):
        """Send ``msg`` with a fresh ``req_id`` and await the matching reply."""
        msg.req_id = next(self._ids)
        fut = asyncio.get_running_loop().create_future()
        self._pending[msg.req_id] = fut
        try:
            if not self.send(dst, msg):
                return None
            return await asyncio.wait_for(fut, timeout or self.config.request_timeout)
        except asyncio.TimeoutError:
            return None
        finally:
            self._pending.pop(msg.req_id, None)

    def receive(self, env: Envelope) -> None:
        """Transport callback: decode and dispatch one envelope."""
        try:
            msg = m.from_envelope(env)
        except WireError as exc:
            log.debug("bad payload from %s: %s", env.src.hex()[:8], exc)
            return
        if isinstance(msg, _RESPONSES):
            fut = self._pending.get(msg.req_id)
            if fut is not None and not fut.done():
                fut.set_result(msg)
            return
        handler = getattr(self, f"_on_{type(msg).__name__}", None)
        if handler is None:
            return
        out = handler(msg, env.src)
        if asyncio.iscoroutine(out):
            self._spawn(out)

    def my_proof(self, chunk_hash: bytes) -> SelectionProof | None:
        if chunk_hash not in self._proofs:
            self._proofs[chunk_hash] = selection.selection_proof(
                self.kp, chunk_hash, self.config.selection)
        return self._proofs[chunk_hash]

    def held_indices(self, chunk_hash: bytes) -> tuple[int, ...]:
        return tuple(sorted(self.stored.get(chunk_hash, {})))

    def _address_of(self, node: bytes) -> str:
        peer = self.directory.get(node)
        return peer.address if peer is not None else ""

    def _stored_bytes(self) -> int:
        return sum(len(sf.fragment.data) for frags in self.stored.values() for sf in frags.values())

    def _merge_entries(self, chunk_hash: bytes, entries: Sequence[m.MemberEntry]) -> None:
        view = self.views.get(chunk_hash)
        if view is None:
            return
        shunned = self.evicted.get(chunk_hash, ())
        now = self.now()
        for e in entries:
            if e.node_id == self.id or e.node_id in shunned:
                continue
            if crypto.node_id(e.proof.pk) != e.node_id:
                continue
            if not selection.verify_selection(chunk_hash, e.proof, self.config.selection):
                continue
            view.upsert(e.node_id, e.proof, now, e.indices, e.address or self._address_of(e.node_id))

    def _keep(self, fragment: Fragment, proof: SelectionProof, expiration: float) -> None:
        chash = fragment.chunk_hash
        if self.config.byzantine:
            # claims without data: keep the index, drop the bytes
            fragment = Fragment(chash, fragment.stream_index, fragment.chunk_size, b"")
        now = self.now()
        self.stored.setdefault(chash, {})[fragment.stream_index] = StoredFragment(
            fragment, proof, now, expiration)
        view = self.views.setdefault(chash, GroupView(chash, self.id))
        view.upsert(self.id, proof, now, [fragment.stream_index], self.address)
        self.metrics.stored += 1

    def drop_chunk(self, chunk_hash: bytes) -> None:
        self.stored.pop(chunk_hash, None)
        self.views.pop(chunk_hash, None)
        self.cache.pop(chunk_hash, None)

    # -- server handlers ------------------------------------------------------

    def _on_ProofRequest(self, msg: m.ProofRequest, src: bytes):
        self.send(src, m.ProofResponse(msg.req_id, msg.chunk_hash, self.my_proof(msg.chunk_hash),
                                       self.held_indices(msg.chunk_hash)))

    def _on_StoreFragment(self, msg: m.StoreFragment, src: bytes):
        frag = msg.fragment
        chash = frag.chunk_hash
        proof = self.my_proof(chash)
        if proof is None:
            self.send(src, m.StoreAck(msg.req_id, chash, False, "not-selected"))
            return
        held = self.stored.get(chash, {})
        if frag.stream_index in held:
            self.send(src, m.StoreAck(msg.req_id, chash, True, "already-stored", proof,
                                      self.held_indices(chash)))
            return
        cap = self.config.capacity_bytes
        if cap is not None and self._stored_bytes() + len(frag.data) > cap:
            self.send(src, m.StoreAck(msg.req_id, chash, False, "disk-full"))
            return
        self._keep(frag, proof, msg.expiration)
        self.send(src, m.StoreAck(msg.req_id, chash, True, "stored", proof, self.held_indices(chash)))

    def _on_GetFragment(self, msg: m.GetFragment, src: bytes):
        frag = None
        if not self.config.byzantine:
            skip = set(msg.exclude)
            for idx, sf in sorted(self.stored.get(msg.chunk_hash, {}).items()):
                if idx not in skip:
                    frag = sf.fragment
                    break
        if frag is not None:
            self.metrics.fragments_served += 1
        self.send(src, m.FragmentData(msg.req_id, msg.chunk_hash, frag))

    def _on_MembershipPush(self, msg: m.MembershipPush, src: bytes):
        self._merge_entries(msg.chunk_hash, msg.members)

    def _on_PersistenceClaim(self, claim: m.PersistenceClaim, src: bytes):
        chash = claim.chunk_hash
        view = self.views.get(chash)
        if view is None or chash not in self.stored:
            return
        sender = crypto.node_id(claim.proof.pk)
        if sender == self.id or sender in self.evicted.get(chash, ()):
            return
        info = view.members.get(sender)
        if info is not None and claim.timestamp <= info.claim_ts:
            return
        if not (crypto.verify_signature(claim.proof.pk, claim.signed_bytes(), claim.signature)
                and selection.verify_selection(chash, claim.proof, self.config.selection)):
            self.metrics.claims_rejected += 1
            return
        info = view.upsert(sender, claim.proof, self.now(), [claim.stream_index],
                           self._address_of(sender))
        info.claim_ts = claim.timestamp
        self.metrics.claims_accepted += 1

    def _on_RepairRequest(self, msg: m.RepairRequest, src: bytes):
        chash = msg.chunk_hash
        if chash in self.stored:
            self.send(src, m.StoreAck(msg.req_id, chash, True, "already-stored",
                                      self.my_proof(chash), self.held_indices(chash)))
            return
        if chash in self._joining:
            self.send(src, m.StoreAck(msg.req_id, chash, True, "in-progress", self.my_proof(chash)))
            return
        proof = self.my_proof(chash)
        if proof is None:
            self.send(src, m.StoreAck(msg.req_id, chash, False, "not-selected"))
            return
        cap = self.config.capacity_bytes
        if cap is not None and self._stored_bytes() >= cap:
            self.send(src, m.StoreAck(msg.req_id, chash, False, "disk-full"))
            return
        self._joining.add(chash)
        view = self.views.setdefault(chash, GroupView(chash, self.id))
        self._merge_entries(chash, msg.view)
        self.send(src, m.StoreAck(msg.req_id, chash, True, "joining", proof))
        self._spawn(self._join(chash, msg.expiration))

    def _on_ChunkCacheRequest(self, msg: m.ChunkCacheRequest, src: bytes):
        frag = None
        entry = self.cache.get(msg.chunk_hash)
        if entry is not None and not self.config.byzantine and entry[1] >= self.now():
            frag = codec.inner_encode(entry[0], msg.stream_index, self.config.codec.k_inner,
                                      msg.chunk_hash)
            self.metrics.cache_served += 1
        self.send(src, m.ChunkCacheResponse(msg.req_id, msg.chunk_hash, frag))

    def _on_Evict(self, msg: m.Evict, src: bytes):
        chash = msg.chunk_hash
        if msg.target == self.id:
            log.info("evicted from chunk %s", chash.hex()[:12])
            self.drop_chunk(chash)
            return
        self.evicted.setdefault(chash, set()).add(msg.target)
        view = self.views.get(chash)
        if view is not None:
            view.remove(msg.target)

    def _on_ViewRequest(self, msg: m.ViewRequest, src: bytes):
        view = self.views.get(msg.chunk_hash)
        entries = []
        if view is not None and msg.chunk_hash in self.stored:
            now = self.now()
            for e in view.entries():
                if view.is_alive(e.node_id, now, self.config.timeout):
                    entries.append(e)
        self.send(src, m.ViewResponse(msg.req_id, msg.chunk_hash, self.now(), entries))

    # -- group maintenance ----------------------------------------------------

    async def _heartbeat_loop(self):
        await asyncio.sleep(self.rng.uniform(0, self.config.heartbeat))
        while self.running:
            self.on_heartbeat()
            await asyncio.sleep(self.config.heartbeat)

    async def _sync_loop(self):
        await asyncio.sleep(self.rng.uniform(0, self.config.sync_interval))
        while self.running:
            for chash in list(self.stored):
                await self.on_membership_sync(chash)
            await asyncio.sleep(self.config.sync_interval)

    def make_claim(self, chunk_hash: bytes, index: int) -> m.PersistenceClaim:
        sf = self.stored[chunk_hash][index]
        claim = m.PersistenceClaim(chunk_hash, index, sf.proof, self.now())
        claim.signature = crypto.sign(self.kp, claim.signed_bytes())
        return claim

    def announce(self, chunk_hash: bytes) -> None:
        view = self.views.get(chunk_hash)
        if view is None:
            return
        claims = [self.make_claim(chunk_hash, i) for i in self.held_indices(chunk_hash)]
        for member in list(view.members):
            if member == self.id:
                continue
            for claim in claims:
                self.send(member, claim)
                self.metrics.claims_sent += 1

    def on_heartbeat(self) -> None:
        """Claims out, stale members expired, repair scheduled on a deficit."""
        now = self.now()
        cfg = self.config
        for chash in list(self.stored):
            frags = self.stored[chash]
            for idx in [i for i, sf in frags.items() if sf.expiration < now]:
                del frags[idx]
            if not frags:
                self.drop_chunk(chash)
        for chash in [h for h, (_, exp) in self.cache.items() if exp < now]:
            del self.cache[chash]

        for chash in list(self.stored):
            view = self.views[chash]
            view.expire(now, cfg.timeout)
            self.announce(chash)
            alive = view.alive_fragments(now, cfg.timeout)
            if (alive < cfg.codec.r_group and chash not in self._repair_scheduled
                    and self._repair_until.get(chash, -1.0) < now):
                self._repair_scheduled.add(chash)
                self._spawn(self._delayed_repair(chash, self.rng.uniform(0, cfg.jitter_window)))

    async def _delayed_repair(self, chash: bytes, delay: float):
        try:
            await asyncio.sleep(delay)
            view = self.views.get(chash)
            if view is None:
                return
            deficit = self.config.codec.r_group - view.alive_fragments(self.now(), self.config.timeout)
            if deficit > 0:
                await self.start_repair(chash, deficit)
        finally:
            self._repair_scheduled.discard(chash)

    async def on_membership_sync(self, chunk_hash: bytes) -> None:
        if chunk_hash not in self.stored:
            return
        located = await self.locate(chunk_hash)
        self._merge_located(chunk_hash, located)

    def _merge_located(self, chunk_hash: bytes, located: Sequence[Located]) -> None:
        view = self.views.get(chunk_hash)
        if view is None:
            return
        shunned = self.evicted.get(chunk_hash, ())
        now = self.now()
        for loc in located:
            nid = loc.peer.node_id
            if loc.indices and nid != self.id and nid not in shunned:
                view.upsert(nid, loc.proof, now, loc.indices, loc.peer.address)

    async def start_repair(self, chunk_hash: bytes, deficit: int) -> int:
        """Recruit up to ``deficit`` fresh eligible peers; returns requests sent."""
        view = self.views.get(chunk_hash)
        if view is None or deficit <= 0:
            return 0
        self.metrics.repairs_started += 1
        located = await self.locate(chunk_hash)
        self._merge_located(chunk_hash, located)
        now = self.now()
        deficit = self.config.codec.r_group - view.alive_fragments(now, self.config.timeout)
        if deficit <= 0:
            return 0
        shunned = self.evicted.get(chunk_hash, ())
        fresh = [loc.peer for loc in located
                 if loc.peer.node_id not in view and loc.peer.node_id != self.id
                 and loc.peer.node_id not in shunned and not loc.indices]
        if not fresh:
            log.debug("no fresh eligible peers for %s", chunk_hash.hex()[:12])
            return 0
        expiration = max(sf.expiration for sf in self.stored[chunk_hash].values())
        entries = view.entries()
        targets = fresh[:deficit]

        async def recruit(peer: Peer):
            ack = await self.request(peer.node_id,
                                     m.RepairRequest(0, chunk_hash, expiration, entries))
            if ack is not None and ack.ok and ack.status == "already-stored" and ack.proof:
                if selection.verify_selection(chunk_hash, ack.proof, self.config.selection):
                    view.upsert(peer.node_id, ack.proof, self.now(), ack.indices, peer.address)

        self.metrics.repair_requests_sent += len(targets)
        await asyncio.gather(*(recruit(p) for p in targets))
        # give recruits time to rebuild and announce before asking again
        self._repair_until[chunk_hash] = self.now() + self.config.timeout
        return len(targets)

    def _fresh_index(self, view: GroupView) -> int:
        taken = view.all_indices()
        while True:
            idx = self.rng.randrange(codec.OUTER_INDEX_BASE, codec.MAX_INDEX)
            if idx not in taken:
                return idx

    async def _join(self, chash: bytes, expiration: float):
        try:
            for attempt in range(self.config.join_attempts):
                frag = await self.regenerate(chash)
                if frag is not None:
                    proof = self.my_proof(chash)
                    self._keep(frag, proof, expiration)
                    self.metrics.joins_completed += 1
                    self.announce(chash)
                    return
                await asyncio.sleep(self.config.sync_interval)
                located = await self.locate(chash)
                self._merge_located(chash, located)
            log.info("gave up joining %s", chash.hex()[:12])
            if chash not in self.stored:
                self.views.pop(chash, None)
        finally:
            self._joining.discard(chash)

    async def regenerate(self, chash: bytes) -> Fragment | None:
        """Obtain a new fragment at a fresh index: cache first, then decode."""
        view = self.views.get(chash)
        if view is None:
            return None
        k = self.config.codec.k_inner
        new_index = self._fresh_index(view)
        peers = [n for n in view.members if n != self.id]
        if self.config.byzantine:
            return Fragment(chash, new_index, 0, b"")

        if self.config.cache_ttl > 0 and peers:
            frag = await self._cache_fetch(chash, new_index, peers)
            if frag is not None:
                self.metrics.cache_hits += 1
                self.metrics.repair_fragments_in += 1
                return frag

        frags = await self.collect_fragments(chash, peers, k)
        self.metrics.repair_fragments_in += len(frags)
        chunk = self._decode_any(frags, k, chash)
        if chunk is None:
            return None
        self.metrics.cache_misses += 1
        if self.config.cache_ttl > 0:
            self.cache[chash] = (chunk, self.now() + self.config.cache_ttl)
        return codec.inner_encode(chunk, new_index, k, chash)

    async def _cache_fetch(self, chash: bytes, index: int, peers: list[bytes]) -> Fragment | None:
        tasks = [asyncio.ensure_future(self.request(p, m.ChunkCacheRequest(0, chash, index)))
                 for p in peers]
        try:
            for done in asyncio.as_completed(tasks):
                resp = await done
                f = resp.fragment if resp is not None else None
                if f is not None and f.chunk_hash == chash and f.stream_index == index:
                    return f
        finally:
            for t in tasks:
                t.cancel()
        return None

    async def collect_fragments(self, chash: bytes, peers: Sequence[bytes], want: int,
                                have: Sequence[Fragment] = ()) -> list[Fragment]:
        """Pull fragments from ``peers`` until ``want`` distinct ones arrive."""
        got: dict[int, Fragment] = {f.stream_index: f for f in have}
        queue = list(peers)
        while len(got) < want and queue:
            batch, queue = queue[: want - len(got)], queue[want - len(got):]
            replies = await asyncio.gather(*(
                self.request(p, m.GetFragment(0, chash, tuple(sorted(got)))) for p in batch))
            for resp in replies:
                f = resp.fragment if resp is not None else None
                if f is not None and f.chunk_hash == chash and f.stream_index not in got:
                    got[f.stream_index] = f
        return list(got.values())

    def _decode_any(self, frags: list[Fragment], k: int, chash: bytes) -> bytes | None:
        if len(frags) < k:
            return None
        try:
            return codec.inner_decode(frags, k, chash)
        except NeedMoreSymbols:
            return None
        except IntegrityError:
            pass
        # one bad fragment: try leaving each out in turn
        if len(frags) > k:
            for skip in range(len(frags)):
                try:
                    return codec.inner_decode(frags[:skip] + frags[skip + 1:], k, chash)
                except CodecError:
                    continue
        return None

    # -- locate ---------------------------------------------------------------

    async def locate(self, chunk_hash: bytes) -> list[Located]:
        held: dict[bytes, tuple[int, ...]] = {}

        async def ask(peer: Peer, chash: bytes):
            if peer.node_id == self.id:
                held[peer.node_id] = self.held_indices(chash)
                return self.my_proof(chash)
            resp = await self.request(peer.node_id, m.ProofRequest(0, chash))
            if resp is None:
                return None
            held[peer.node_id] = resp.indices
            return resp.proof

        pairs = await selection.locate(chunk_hash, self.directory, self.config.selection, ask,
                                       self.config.max_inflight)
        return [Located(p, proof, held.get(p.node_id, ())) for p, proof in pairs]

    # -- client operations ----------------------------------------------------

    async def client_store(self, obj: bytes, secret: bytes, expiration: float) -> ObjectRecipe:
        if not obj:
            raise ValueError("object must be non-empty")
        params = self.config.codec
        chunks = codec.outer_encode(obj, secret, params)
        counts = await asyncio.gather(*(self.store_chunk(c, expiration) for c in chunks))
        progress = {c.chash: n for c, n in zip(chunks, counts)}
        if any(n < params.r_group for n in counts):
            raise StoreError(progress)
        return ObjectRecipe(chunks[0].object_hash, tuple(c.chash for c in chunks), expiration, params)

    async def store_chunk(self, chunk: Chunk, expiration: float) -> int:
        """Place ``r_group`` fragments; returns how many were acknowledged.

        Fragments go to distinct eligible peers, nearest first, with indices
        0, 1, 2, ... . If fewer than ``r_group`` distinct peers are eligible
        the nearest ones take an extra fragment each, round robin, provided
        at least ``k_inner`` distinct peers hold data.
        """
        params = self.config.codec
        chash = chunk.chash
        blocks = codec.split_blocks(chunk.data, params.k_inner)
        members: dict[bytes, tuple[Peer, SelectionProof, list[int]]] = {}
        refused: set[bytes] = set()
        next_index = itertools.count()
        free: list[int] = []

        def take_index() -> int:
            return free.pop(0) if free else next(next_index)

        def fragment(idx: int) -> Fragment:
            return Fragment(chash, idx, len(chunk.data), codec.encode_symbol(blocks, idx))

        async def place(peer: Peer, idx: int) -> bool:
            ack = await self.request(peer.node_id, m.StoreFragment(0, fragment(idx), expiration))
            ok = (ack is not None and ack.ok and ack.proof is not None and ack.proof.pk == peer.pk
                  and selection.verify_selection(chash, ack.proof, self.config.selection))
            if not ok:
                free.append(idx)
                free.sort()
                if ack is not None and not ack.ok:
                    refused.add(peer.node_id)
                return False
            entry = members.setdefault(peer.node_id, (peer, ack.proof, []))
            entry[2].append(idx)
            return True

        def total() -> int:
            return sum(len(e[2]) for e in members.values())

        located: list[Located] = []
        for _ in range(self.config.locate_rounds):
            located = await self.locate(chash)
            fresh = [loc.peer for loc in located
                     if loc.peer.node_id not in members and loc.peer.node_id not in refused]
            need = params.r_group - total()
            if fresh and need > 0:
                await asyncio.gather(*(place(p, take_index()) for p in fresh[:need]))
            if total() >= params.r_group:
                break

        if total() < params.r_group and len(members) >= params.k_inner:
            holders = [e[0] for e in sorted(
                members.values(), key=lambda e: selection.ring_distance(
                    e[0].position, int.from_bytes(chash, "big")))]
            for _ in range(self.config.locate_rounds):
                need = params.r_group - total()
                if need <= 0:
                    break
                batch = [holders[i % len(holders)] for i in range(need)]
                # one in-flight store per holder keeps the round robin fair
                for start in range(0, len(batch), len(holders)):
                    await asyncio.gather(*(place(p, take_index())
                                           for p in batch[start:start + len(holders)]))

        if members:
            entries = [m.MemberEntry(nid, peer.address, tuple(sorted(idx)), proof)
                       for nid, (peer, proof, idx) in members.items()]
            push = m.MembershipPush(chash, expiration, entries)
            for nid in members:
                self.send(nid, push)
        return total()

    async def retrieve_chunk(self, chash: bytes) -> bytes | None:
        """Locate the group, pull ``k_inner`` fragments and decode.

        A rank-deficient or inconsistent set is widened a little at a time
        until it decodes or the located peers run dry; a fresh locate round
        follows when that is not enough, since slow peers drop out of a
        single round.
        """
        k = self.config.codec.k_inner
        for _ in range(self.config.locate_rounds):
            located = await self.locate(chash)
            queue = ([loc.peer.node_id for loc in located if loc.indices]
                     + [loc.peer.node_id for loc in located if not loc.indices])
            frags = await self.collect_fragments(chash, queue, k)
            chunk = self._decode_any(frags, k, chash)
            for extra in (1, 2, 4):
                if chunk is not None or len(frags) < k:
                    break
                more = await self.collect_fragments(chash, queue, len(frags) + extra, frags)
                if len(more) <= len(frags):
                    break
                frags = more
                chunk = self._decode_any(frags, k, chash)
            if chunk is not None:
                return chunk
        return None

    async def client_query(self, recipe: ObjectRecipe, secret: bytes,
                           expected_hash: bytes | None = None) -> bytes:
        """Fetch chunks in parallel and decode from the first ``k_outer``."""
        params = recipe.params
        indices = codec.chunk_indices(secret, recipe.object_hash, params)
        order = {}
        for pos, (h, idx) in enumerate(zip(recipe.chunk_hashes, indices)):
            if h is not None:
                order[asyncio.ensure_future(self.retrieve_chunk(h))] = (pos, h, idx)
        status = {h: "pending" for h in recipe.chunk_hashes if h is not None}
        decoded: list[Chunk] = []
        pending = set(order)
        try:
            while pending:
                done, pending = await asyncio.wait(pending, return_when=asyncio.FIRST_COMPLETED)
                for task in sorted(done, key=lambda t: order[t][0]):
                    _, h, idx = order[task]
                    data = task.result()
                    if data is None:
                        status[h] = "unrecoverable"
                    else:
                        status[h] = "decoded"
                        decoded.append(Chunk(recipe.object_hash, idx, data))
                if len(decoded) >= params.k_outer:
                    try:
                        return codec.outer_decode(decoded, params,
                                                  expected_hash or recipe.object_hash)
                    except NeedMoreSymbols:
                        continue
            raise ObjectUnavailable(status)
        finally:
            for task in order:
                task.cancel()
