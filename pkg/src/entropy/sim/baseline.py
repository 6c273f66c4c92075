"""Replicated baseline: every object on three random nodes, repaired on loss.

A replica failure is repaired immediately: a fresh random node copies the
whole object from a surviving honest replica and is in place after the
repair latency. Byzantine replicas look healthy but hold nothing, so an
object is lost the moment its last honest replica disappears.
"""

from __future__ import annotations

import heapq
import logging
import random

from .config import HOURS_PER_YEAR, SimConfig, SimMetrics

log = logging.getLogger(__name__)

REPLICAS = 3
_FAIL, _COMPLETE, _ATTACK = range(3)


class BaselineSim:
    system = "baseline"

    def __init__(self, cfg: SimConfig, replicas: int = REPLICAS):
        if replicas > cfg.n_nodes:
            raise ValueError("more replicas than nodes")
        self.cfg = cfg
        self.replicas = replicas
        self.rng = random.Random(cfg.seed)
        self.now = 0.0
        self._events: list = []
        self._seq = 0
        self.metrics = SimMetrics(self.system, cfg.objects)
        N = cfg.n_nodes
        n_byz = round(cfg.byzantine_fraction * N)
        self.byz = [False] * N
        for i in self.rng.sample(range(N), n_byz):
            self.byz[i] = True
        self.honest = [i for i in range(N) if not self.byz[i]]
        self._honest_at = {v: i for i, v in enumerate(self.honest)}
        self.held: list[set[int]] = [set() for _ in range(N)]   # slot -> objects
        self.holders: list[set[int]] = []
        self.honest_count: list[int] = []
        self.pending: dict[int, int] = {}                       # object -> repairs in flight
        self.lost = [False] * cfg.objects
        for o in range(cfg.objects):
            slots = self.rng.sample(range(N), replicas)
            self.holders.append(set(slots))
            for s in slots:
                self.held[s].add(o)
            self.honest_count.append(sum(not self.byz[s] for s in slots))
            self._check_loss(o)
        # generation per slot so a completion aimed at a replaced node is void
        self.gen = [0] * N
        self.metrics.storage_ratio_initial = self.storage_ratio()

    def storage_ratio(self) -> float:
        if not self.cfg.objects:
            return 0.0
        return sum(len(h) for o, h in enumerate(self.holders) if not self.lost[o]) / self.cfg.objects

    def _push(self, t: float, kind: int, data) -> None:
        self._seq += 1
        heapq.heappush(self._events, (t, self._seq, kind, data))

    def _check_loss(self, o: int) -> None:
        if not self.lost[o] and self.honest_count[o] == 0:
            self.lost[o] = True
            self.metrics.lost_objects += 1
            self.metrics.loss_times_hours.append(self.now)

    def kill(self, slot: int) -> list[int]:
        """Wipe a node; the slot is reused by a fresh honest node."""
        objs = sorted(self.held[slot])
        self.held[slot] = set()
        self.gen[slot] += 1
        for o in objs:
            self.holders[o].discard(slot)
            if not self.byz[slot]:
                self.honest_count[o] -= 1
            self._check_loss(o)
        if self.byz[slot]:
            self.byz[slot] = False
            self._honest_at[slot] = len(self.honest)
            self.honest.append(slot)
        return objs

    def _start_repair(self, o: int) -> None:
        if self.lost[o]:
            return
        while True:
            slot = self.rng.randrange(self.cfg.n_nodes)
            if slot not in self.holders[o]:
                break
        self.pending[o] = self.pending.get(o, 0) + 1
        self._push(self.now + self.cfg.repair_latency_hours, _COMPLETE, (o, slot, self.gen[slot]))

    def _on_complete(self, o: int, slot: int, gen: int) -> None:
        self.pending[o] -= 1
        if self.lost[o]:
            return
        if gen != self.gen[slot] or slot in self.holders[o]:
            self._start_repair(o)
            return
        self.holders[o].add(slot)
        self.held[slot].add(o)
        if not self.byz[slot]:
            self.honest_count[o] += 1
        self.metrics.repairs += 1
        self.metrics.repair_traffic_objects += 1.0

    def _on_attack(self) -> None:
        attack = self.cfg.attack
        budget = round(attack.fraction * self.cfg.n_nodes)
        touched: list[int] = []
        killed = 0
        if attack.strategy == "random":
            for s in self.rng.sample(self.honest, min(budget, len(self.honest))):
                touched.extend(self.kill(s))
                killed += 1
        while attack.strategy == "greedy" and killed < budget:
            best = None
            for o in range(self.cfg.objects):
                if self.lost[o]:
                    continue
                plan = sorted(s for s in self.holders[o] if not self.byz[s])
                if best is None or len(plan) < len(best):
                    best = plan
            if best is None:
                break
            for s in best[: budget - killed]:
                touched.extend(self.kill(s))
                killed += 1
        self.metrics.attacked_nodes = killed
        for o in dict.fromkeys(touched):
            self._start_repair(o)

    def run(self) -> SimMetrics:
        cfg = self.cfg
        end = cfg.duration_hours
        rate = cfg.churn_per_year / HOURS_PER_YEAR
        if rate > 0:
            self._push(self.rng.expovariate(rate * len(self.honest)), _FAIL, None)
        if cfg.attack is not None and cfg.attack.fraction > 0:
            self._push(cfg.attack.at_hours, _ATTACK, None)
        while self._events:
            t, _, kind, data = heapq.heappop(self._events)
            if t > end:
                break
            self.now = t
            if kind == _FAIL:
                slot = self.honest[self.rng.randrange(len(self.honest))]
                self.metrics.node_failures += 1
                for o in self.kill(slot):
                    self._start_repair(o)
                self._push(t + self.rng.expovariate(rate * len(self.honest)), _FAIL, None)
            elif kind == _COMPLETE:
                self._on_complete(*data)
            else:
                self._on_attack()
        self.now = end
        self.metrics.repair_fragments = self.metrics.repairs
        self.metrics.storage_ratio_final = self.storage_ratio()
        return self.metrics


def run_baseline(cfg: SimConfig) -> SimMetrics:
    return BaselineSim(cfg).run()
