"""Group-level discrete-event simulation of Entropy storage under churn.

Nodes and chunk hashes live on the 256-bit ring. Eligibility for a chunk is
decided with the real selection distance and threshold; the VRF output is
either a seeded hash stand-in (default) or the real ECVRF on synthetic keys.
Messages are not simulated individually: a failure is noticed one liveness
timeout plus heartbeat phase and repair jitter later, and each recruit
finishes after ``repair_latency_hours``.

Time is in hours. Repair traffic counts fragment-sized transfers; a
regeneration costs ``k_inner`` of them on a cache miss and one on a cache
hit, and Byzantine recruits cost nothing since they never fetch.
"""

from __future__ import annotations

import bisect
import hashlib
import heapq
import logging
import math
import random
from fractions import Fraction

from .. import crypto
from ..selection import SelectionParams, output_to_r, threshold, vrf_input
from .config import HOURS_PER_YEAR, SimConfig, SimMetrics

log = logging.getLogger(__name__)

RING = 1 << 256
_FAIL, _DETECT, _COMPLETE, _ATTACK = range(4)


class _Node:
    __slots__ = ("uid", "pos", "byz", "groups", "elig", "pending", "key")

    def __init__(self, uid: int, pos: int, byz: bool):
        self.uid = uid
        self.pos = pos
        self.byz = byz
        self.groups: dict[int, int] = {}     # chunk -> fragments held
        self.elig: dict[int, int] = {}       # chunk -> raw ring distance
        self.pending: set[int] = set()       # chunks with a repair in flight here
        self.key = None


def arc(sorted_pos: list[int], center: int, radius: int) -> list[int]:
    """Indices into ``sorted_pos`` within ``radius`` of ``center`` on the ring."""
    if 2 * radius >= RING:
        return list(range(len(sorted_pos)))
    lo, hi = center - radius, center + radius
    spans = []
    if lo < 0:
        spans = [(lo + RING, RING - 1), (0, hi)]
    elif hi >= RING:
        spans = [(lo, RING - 1), (0, hi - RING)]
    else:
        spans = [(lo, hi)]
    out: list[int] = []
    for a, b in spans:
        out.extend(range(bisect.bisect_left(sorted_pos, a), bisect.bisect_right(sorted_pos, b)))
    return out


def _discard(lst: list, item) -> None:
    i = bisect.bisect_left(lst, item)
    if i < len(lst) and lst[i] == item:
        del lst[i]


def _raw(a: int, b: int) -> int:
    diff = (a - b) % RING
    return min(diff, RING - diff)


class EntropySim:
    system = "entropy"

    def __init__(self, cfg: SimConfig, audit: bool = False):
        self.cfg = cfg
        self.audit = audit
        self.rng = random.Random(cfg.seed)
        codec = cfg.codec
        self.k = codec.k_inner
        self.R = codec.r_group
        self.n_chunks = codec.n_chunks
        self.max_lost_chunks = codec.n_chunks - codec.k_outer
        self.frag_unit = 1.0 / (codec.k_outer * codec.k_inner)
        N = cfg.n_nodes
        self.sel = SelectionParams(total_nodes=N, r_group=self.R)
        m = self.sel.m
        self.m_float = float(m)
        # d <= m means certain eligibility; d > m + slack has p < 2^-slack
        self.raw_full = math.floor((m - 1) * RING / N)
        self.raw_window = math.floor((m - 1 + Fraction(cfg.lottery_slack)) * RING / N)
        self.vrf_salt = cfg.seed.to_bytes(8, "big", signed=True)

        self.now = 0.0
        self._events: list = []
        self._seq = 0
        self.metrics = SimMetrics(self.system, cfg.objects)
        self.repair_fragments = 0
        self.trace: list[tuple[float, int]] | None = None

        self.nodes: dict[int, _Node] = {}
        self.ring_pos: list[int] = []
        self.ring_uid: list[int] = []
        self.honest: list[int] = []
        self._honest_at: dict[int, int] = {}
        self._next_uid = 0

        n_byz = round(cfg.byzantine_fraction * N)
        byz = set(self.rng.sample(range(N), n_byz))
        for i in range(N):
            self._add_node(self.rng.getrandbits(256), i in byz)

        n = cfg.objects * codec.n_chunks
        self.chash = [self.rng.getrandbits(256).to_bytes(32, "big") for _ in range(n)]
        self.cpos = [int.from_bytes(h, "big") for h in self.chash]
        order = sorted(range(n), key=self.cpos.__getitem__)
        self.cring_pos = [self.cpos[c] for c in order]
        self.cring_idx = order
        self.members: list[dict[int, int]] = [{} for _ in range(n)]
        self.honest_frags = [0] * n
        self.total_frags = [0] * n
        self.eligible: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        # eligible nodes that are neither members nor mid-repair, nearest first
        self.free: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        self.inflight = [0] * n
        self.lost = [False] * n
        self.starved = [False] * n
        self.cache: list[list[tuple[float, int]]] = [[] for _ in range(n)]
        self.obj_lost_chunks = [0] * cfg.objects

        for c in range(n):
            for i in arc(self.ring_pos, self.cpos[c], self.raw_window):
                node = self.nodes[self.ring_uid[i]]
                self._consider(node, c)
        for c in range(n):
            self._store(c)
        self.metrics.storage_ratio_initial = self.storage_ratio()
        if cfg.trace_chunk is not None:
            self.trace = [(0.0, self.honest_frags[cfg.trace_chunk])]

    # -- nodes ------------------------------------------------------------

    def _add_node(self, pos: int, byz: bool) -> _Node:
        uid = self._next_uid
        self._next_uid += 1
        node = _Node(uid, pos, byz)
        if self.cfg.real_crypto:
            node.key = crypto.keypair_from_int(self.cfg.seed * 1_000_003 + uid)
            node.pos = pos = int.from_bytes(node.key.node_id, "big")
        self.nodes[uid] = node
        i = bisect.bisect_left(self.ring_pos, pos)
        self.ring_pos.insert(i, pos)
        self.ring_uid.insert(i, uid)
        if not byz:
            self._honest_at[uid] = len(self.honest)
            self.honest.append(uid)
        return node

    def _drop_node(self, node: _Node) -> None:
        del self.nodes[node.uid]
        i = bisect.bisect_left(self.ring_pos, node.pos)
        del self.ring_pos[i]
        del self.ring_uid[i]
        if not node.byz:
            at = self._honest_at.pop(node.uid)
            last = self.honest.pop()
            if last != node.uid:
                self.honest[at] = last
                self._honest_at[last] = at

    def _vrf_r(self, node: _Node, c: int) -> int:
        if node.key is not None:
            return output_to_r(crypto.vrf_output(node.key, vrf_input(self.chash[c])))
        digest = hashlib.sha256(self.vrf_salt + node.uid.to_bytes(8, "big") + self.chash[c]).digest()
        return int.from_bytes(digest, "big")

    def _selected(self, node: _Node, c: int, raw: int) -> bool:
        if raw <= self.raw_full:
            return True
        if raw > self.raw_window:
            return False
        r = self._vrf_r(node, c)
        d = raw * self.cfg.n_nodes / RING + 1
        bound = 2.0 ** (256 + self.m_float - d)
        rf = float(r)
        if abs(rf - bound) <= bound * 1e-9:
            exact = Fraction(raw * self.cfg.n_nodes, RING) + 1
            return r < threshold(exact, self.sel)
        return rf < bound

    def _consider(self, node: _Node, c: int) -> bool:
        raw = _raw(self.cpos[c], node.pos)
        if not self._selected(node, c, raw):
            return False
        bisect.insort(self.eligible[c], (raw, node.uid))
        bisect.insort(self.free[c], (raw, node.uid))
        node.elig[c] = raw
        return True

    # -- placement --------------------------------------------------------

    def _store(self, c: int) -> None:
        """Initial placement: nearest eligible first, extras round-robin."""
        elig = [uid for _, uid in self.eligible[c]]
        if len(elig) >= self.R:
            counts = [(uid, 1) for uid in elig[: self.R]]
        elif len(elig) >= self.k:
            q, rem = divmod(self.R, len(elig))
            counts = [(uid, q + (i < rem)) for i, uid in enumerate(elig)]
        else:
            counts = [(uid, 1) for uid in elig]
        for uid, cnt in counts:
            self._place(c, self.nodes[uid], cnt)
        self._check_loss(c)

    def _place(self, c: int, node: _Node, cnt: int) -> None:
        if node.uid not in self.members[c] and c in node.elig:
            _discard(self.free[c], (node.elig[c], node.uid))
        node.groups[c] = node.groups.get(c, 0) + cnt
        self.members[c][node.uid] = self.members[c].get(node.uid, 0) + cnt
        self.total_frags[c] += cnt
        if not node.byz:
            self.honest_frags[c] += cnt
        self._record(c)

    def _record(self, c: int) -> None:
        if self.trace is not None and c == self.cfg.trace_chunk:
            self.trace.append((self.now, self.honest_frags[c]))

    def _check_loss(self, c: int) -> None:
        if self.lost[c] or self.honest_frags[c] >= self.k:
            return
        self.lost[c] = True
        self.metrics.lost_chunks += 1
        o = c // self.n_chunks
        self.obj_lost_chunks[o] += 1
        if self.obj_lost_chunks[o] == self.max_lost_chunks + 1:
            self.metrics.lost_objects += 1
            self.metrics.loss_times_hours.append(self.now)

    def storage_ratio(self) -> float:
        if not self.cfg.objects:
            return 0.0
        return sum(self.total_frags) * self.frag_unit / self.cfg.objects

    # -- events -----------------------------------------------------------

    def _push(self, t: float, kind: int, data) -> None:
        self._seq += 1
        heapq.heappush(self._events, (t, self._seq, kind, data))

    def kill(self, uid: int) -> list[int]:
        """Remove a node for good; returns the chunks that need attention."""
        node = self.nodes[uid]
        self._drop_node(node)
        for c, raw in node.elig.items():
            _discard(self.eligible[c], (raw, uid))
            _discard(self.free[c], (raw, uid))
        touched = []
        for c, cnt in node.groups.items():
            del self.members[c][uid]
            self.total_frags[c] -= cnt
            if not node.byz:
                self.honest_frags[c] -= cnt
            self._record(c)
            self._check_loss(c)
            touched.append(c)
        for c in sorted(node.pending):
            self.inflight[c] -= 1
            touched.append(c)
        return touched

    def join(self) -> _Node:
        """A fresh honest node at a random position, replacing a failed one."""
        node = self._add_node(self.rng.getrandbits(256), False)
        retry = []
        for i in arc(self.cring_pos, node.pos, self.raw_window):
            c = self.cring_idx[i]
            if self._consider(node, c) and self.starved[c] and not self.lost[c]:
                self.starved[c] = False
                retry.append(c)
        if retry:
            self._push(self.now + self.cfg.heartbeat_hours, _DETECT, retry)
        return node

    def _detect_delay(self) -> float:
        cfg = self.cfg
        return (cfg.timeout_hours + self.rng.uniform(0, cfg.heartbeat_hours)
                + self.rng.uniform(0, cfg.jitter_window))

    def fail(self, uid: int) -> None:
        touched = self.kill(uid)
        self.metrics.node_failures += 1
        self.join()
        if touched:
            self._push(self.now + self._detect_delay(), _DETECT, touched)

    def _cache_hit(self, c: int) -> bool:
        entries = [(exp, uid) for exp, uid in self.cache[c] if exp >= self.now]
        self.cache[c] = entries
        return any(uid in self.nodes for _, uid in entries)

    def _on_detect(self, chunks: list[int]) -> None:
        batch = []
        seen = set()
        for c in chunks:
            if c in seen or self.lost[c]:
                continue
            seen.add(c)
            deficit = self.R - self.total_frags[c] - self.inflight[c]
            if deficit <= 0:
                continue
            free = self.free[c]
            picked = [uid for _, uid in free[:deficit]]
            del free[:deficit]
            if len(picked) < deficit:
                self.starved[c] = True
                self.metrics.starved_repairs += 1
            for uid in picked:
                node = self.nodes[uid]
                node.pending.add(c)
                self.inflight[c] += 1
                if node.byz:
                    cost, caches = 0, False
                elif self.cfg.cache_ttl_hours > 0 and self._cache_hit(c):
                    cost, caches = 1, False
                    self.metrics.cache_hits += 1
                else:
                    cost, caches = self.k, self.cfg.cache_ttl_hours > 0
                    self.metrics.cache_misses += 1
                batch.append((c, uid, cost, caches))
        if batch:
            self._push(self.now + self.cfg.repair_latency_hours, _COMPLETE, batch)

    def _on_complete(self, batch) -> None:
        for c, uid, cost, caches in batch:
            node = self.nodes.get(uid)
            if node is None or c not in node.pending:
                continue
            node.pending.discard(c)
            self.inflight[c] -= 1
            if self.lost[c]:
                continue
            self._place(c, node, 1)
            self.repair_fragments += cost
            self.metrics.repairs += 1
            if caches:
                self.cache[c].append((self.now + self.cfg.cache_ttl_hours, uid))

    # -- attacker ---------------------------------------------------------

    def _nodes_to_break(self, c: int) -> list[int]:
        """Cheapest honest members whose loss drops ``c`` below k_inner."""
        need = self.honest_frags[c] - self.k + 1
        pool = sorted(((cnt, len(self.nodes[uid].groups), uid) for uid, cnt in self.members[c].items()
                       if not self.nodes[uid].byz), reverse=True)
        out = []
        for cnt, _, uid in pool:
            if need <= 0:
                break
            out.append(uid)
            need -= cnt
        return out

    def _on_attack(self) -> None:
        attack = self.cfg.attack
        budget = round(attack.fraction * self.cfg.n_nodes)
        touched: list[int] = []
        if attack.strategy == "random":
            victims = self.rng.sample(self.honest, min(budget, len(self.honest)))
            for uid in victims:
                touched.extend(self.kill(uid))
            budget -= len(victims)
        while budget > 0:
            best = None
            for c in range(len(self.cpos)):
                if self.lost[c]:
                    continue
                plan = self._nodes_to_break(c)
                if best is None or len(plan) < len(best):
                    best = plan
            if best is None:
                break
            for uid in best[:budget]:
                touched.extend(self.kill(uid))
            budget -= min(len(best), budget)
        killed = self.cfg.n_nodes - len(self.nodes)
        self.metrics.attacked_nodes = killed
        for _ in range(killed):
            self.join()
        if touched:
            self._push(self.now + self._detect_delay(), _DETECT, touched)

    # -- main loop --------------------------------------------------------

    def check_conservation(self) -> None:
        for c, members in enumerate(self.members):
            honest = sum(cnt for uid, cnt in members.items() if not self.nodes[uid].byz)
            total = sum(members.values())
            if honest != self.honest_frags[c] or total != self.total_frags[c]:
                raise AssertionError(f"fragment accounting broken for chunk {c}")
            for uid, cnt in members.items():
                if self.nodes[uid].groups.get(c) != cnt:
                    raise AssertionError(f"membership mismatch for chunk {c}")

    def run(self) -> SimMetrics:
        cfg = self.cfg
        end = cfg.duration_hours
        rate = cfg.churn_per_year / HOURS_PER_YEAR
        if rate > 0 and self.honest:
            self._push(self.rng.expovariate(rate * len(self.honest)), _FAIL, None)
        if cfg.attack is not None and cfg.attack.fraction > 0:
            self._push(cfg.attack.at_hours, _ATTACK, None)
        while self._events:
            t, _, kind, data = heapq.heappop(self._events)
            if t > end:
                break
            self.now = t
            if kind == _FAIL:
                self.fail(self.honest[self.rng.randrange(len(self.honest))])
                self._push(t + self.rng.expovariate(rate * len(self.honest)), _FAIL, None)
            elif kind == _DETECT:
                self._on_detect(data)
            elif kind == _COMPLETE:
                self._on_complete(data)
            else:
                self._on_attack()
            if self.audit:
                self.check_conservation()
        self.now = end
        return self.finish()

    def finish(self) -> SimMetrics:
        met = self.metrics
        met.repair_fragments = self.repair_fragments
        met.repair_traffic_objects = self.repair_fragments * self.frag_unit
        met.storage_ratio_final = self.storage_ratio()
        if self.trace is not None:
            met.trace = self.trace
        return met


def run_entropy(cfg: SimConfig, audit: bool = False) -> SimMetrics:
    return EntropySim(cfg, audit=audit).run()
