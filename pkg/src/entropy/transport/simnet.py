"""Deterministic in-memory network on a virtual-time asyncio loop.

The loop never sleeps: whenever nothing is ready it jumps the clock to the
next timer. Protocol coroutines therefore run unchanged in simulation and
over real sockets, and a run is a pure function of its seed.
"""

from __future__ import annotations

import asyncio
import hashlib
import logging
import random
import selectors
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

from .wire import Envelope, decode_envelope, encode_envelope

log = logging.getLogger(__name__)


class TransportError(Exception):
    pass


class UnknownDestination(TransportError):
    pass


class SimulationStalled(RuntimeError):
    """The loop would block forever: no timers and nothing ready."""


class _VirtualSelector(selectors.SelectSelector):
    def __init__(self, loop: "VirtualTimeLoop"):
        super().__init__()
        self._loop = loop

    def select(self, timeout=None):
        if timeout is None:
            raise SimulationStalled("no pending timers or callbacks")
        if timeout > 0:
            self._loop._advance(timeout)
        return []


class VirtualTimeLoop(asyncio.SelectorEventLoop):
    """Event loop whose ``time()`` is simulated and advances instantly."""

    def __init__(self, start: float = 0.0):
        self._now = float(start)
        super().__init__(selector=_VirtualSelector(self))

    def time(self) -> float:
        return self._now

    def _advance(self, dt: float) -> None:
        self._now += dt


def run_virtual(coro, start: float = 0.0):
    """Run ``coro`` to completion on a fresh virtual-time loop."""
    loop = VirtualTimeLoop(start)
    try:
        asyncio.set_event_loop(loop)
        return loop.run_until_complete(coro)
    finally:
        for task in asyncio.all_tasks(loop):
            task.cancel()
        loop.run_until_complete(asyncio.sleep(0))
        asyncio.set_event_loop(None)
        loop.close()


@dataclass(frozen=True)
class LatencyModel:
    """Delay ``base + U(0, jitter)`` seconds; each frame dropped w.p. ``drop``."""

    base: float = 0.0
    jitter: float = 0.0
    drop: float = 0.0

    def __post_init__(self):
        if self.base < 0 or self.jitter < 0:
            raise ValueError("delays must be non-negative")
        if not 0.0 <= self.drop <= 1.0:
            raise ValueError("drop must be a probability")

    def sample(self, rng: random.Random) -> float | None:
        if self.drop and rng.random() < self.drop:
            return None
        return self.base + (rng.uniform(0.0, self.jitter) if self.jitter else 0.0)


@dataclass
class NetStats:
    sent: int = 0
    dropped: int = 0
    delivered: int = 0
    bytes_sent: int = 0
    by_type: Counter = field(default_factory=Counter)


class SimNetwork:
    """Routes envelopes between registered endpoints with sampled delays.

    Every frame is really encoded and decoded, so the wire format is
    exercised. ``trace_digest`` hashes the full send/drop/deliver history.
    """

    def __init__(self, latency: LatencyModel = LatencyModel(), seed: int = 0,
                 pair_latency: dict[tuple[bytes, bytes], LatencyModel] | None = None,
                 keep_trace: bool = False):
        self.latency = latency
        self.pair_latency = pair_latency or {}
        self.rng = random.Random(seed)
        self.endpoints: dict[bytes, Callable[[Envelope], None]] = {}
        self.down: set[bytes] = set()
        self.stats = NetStats()
        self._digest = hashlib.sha256()
        self.trace: list[tuple] | None = [] if keep_trace else None

    def register(self, node: bytes, handler: Callable[[Envelope], None]) -> None:
        self.endpoints[node] = handler
        self.down.discard(node)

    def unregister(self, node: bytes) -> None:
        self.endpoints.pop(node, None)

    def crash(self, node: bytes) -> None:
        """Keep the address known but silently discard traffic to and from it."""
        self.down.add(node)

    def revive(self, node: bytes) -> None:
        self.down.discard(node)

    def _record(self, event: str, now: float, env: Envelope, size: int) -> None:
        row = (round(now, 9), event, env.src.hex()[:16], env.dst.hex()[:16], env.msg_type, size)
        self._digest.update(repr(row).encode())
        if self.trace is not None:
            self.trace.append(row)

    @property
    def trace_digest(self) -> str:
        return self._digest.hexdigest()

    def send(self, env: Envelope) -> None:
        if env.dst not in self.endpoints:
            raise UnknownDestination(env.dst.hex()[:16])
        loop = asyncio.get_running_loop()
        frame = encode_envelope(env)
        now = loop.time()
        self.stats.sent += 1
        self.stats.bytes_sent += len(frame)
        self.stats.by_type[env.msg_type] += 1
        model = self.pair_latency.get((env.src, env.dst), self.latency)
        delay = model.sample(self.rng)
        if delay is None or env.src in self.down:
            self.stats.dropped += 1
            self._record("drop", now, env, len(frame))
            return
        self._record("send", now, env, len(frame))
        loop.call_later(delay, self._deliver, frame)

    def _deliver(self, frame: bytes) -> None:
        env = decode_envelope(frame)
        handler = self.endpoints.get(env.dst)
        loop = asyncio.get_running_loop()
        if handler is None or env.dst in self.down:
            self.stats.dropped += 1
            self._record("lost", loop.time(), env, len(frame))
            return
        self.stats.delivered += 1
        self._record("deliver", loop.time(), env, len(frame))
        handler(env)
