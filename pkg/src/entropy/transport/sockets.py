"""asyncio TCP backend for deployment mode.

Each node listens on ``host:port`` and keeps one outbound connection per peer
it talks to. Replies are ordinary envelopes sent back over the replier's own
outbound connection; the first frame on every outbound connection is a
``Hello`` naming the sender's listening address, so a peer can answer clients
that are absent from the membership file.
"""

from __future__ import annotations

import asyncio
import logging
from typing import Callable

from . import messages
from .simnet import TransportError, UnknownDestination
from .wire import Envelope, WireError, decode_envelope, encode_envelope, frame_length

log = logging.getLogger(__name__)


def split_address(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bad address {address!r}, expected host:port")
    return host, int(port)


class SocketTransport:
    def __init__(self, node_id: bytes, host: str, port: int,
                 resolve: Callable[[bytes], str | None],
                 on_envelope: Callable[[Envelope], None],
                 connect_timeout: float = 5.0):
        self.node_id = node_id
        self.host = host
        self.port = port
        self.resolve = resolve
        self.on_envelope = on_envelope
        self.connect_timeout = connect_timeout
        self.learned: dict[bytes, str] = {}
        self._writers: dict[bytes, asyncio.StreamWriter] = {}
        self._locks: dict[bytes, asyncio.Lock] = {}
        self._server: asyncio.base_events.Server | None = None
        self._tasks: set[asyncio.Task] = set()

    @property
    def address(self) -> str:
        return f"{self.host}:{self.port}"

    async def start(self) -> None:
        self._server = await asyncio.start_server(self._serve, self.host, self.port)
        self.port = self._server.sockets[0].getsockname()[1]
        log.info("listening on %s", self.address)

    async def close(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        for w in self._writers.values():
            w.close()
        self._writers.clear()
        for t in list(self._tasks):
            t.cancel()

    def _lookup(self, dst: bytes) -> str:
        addr = self.learned.get(dst) or self.resolve(dst)
        if not addr:
            raise UnknownDestination(dst.hex()[:16])
        return addr

    async def _connection(self, dst: bytes) -> asyncio.StreamWriter:
        w = self._writers.get(dst)
        if w is not None and not w.is_closing():
            return w
        host, port = split_address(self._lookup(dst))
        try:
            _, w = await asyncio.wait_for(asyncio.open_connection(host, port), self.connect_timeout)
        except (OSError, asyncio.TimeoutError) as exc:
            raise TransportError(f"connect to {host}:{port} failed: {exc}") from exc
        hello = messages.to_envelope(messages.Hello(self.address), self.node_id, dst)
        w.write(encode_envelope(hello))
        self._writers[dst] = w
        return w

    async def send_async(self, env: Envelope) -> None:
        """Send one frame; raises :class:`TransportError` on failure."""
        frame = encode_envelope(env)
        lock = self._locks.setdefault(env.dst, asyncio.Lock())
        async with lock:
            w = await self._connection(env.dst)
            try:
                w.write(frame)
                await w.drain()
            except (OSError, ConnectionError) as exc:
                self._writers.pop(env.dst, None)
                w.close()
                raise TransportError(str(exc)) from exc

    def send(self, env: Envelope) -> None:
        """Fire-and-forget send; failures are logged, like a lost frame."""
        self._lookup(env.dst)
        task = asyncio.get_running_loop().create_task(self._send_logged(env))
        self._tasks.add(task)
        task.add_done_callback(self._tasks.discard)

    async def _send_logged(self, env: Envelope) -> None:
        try:
            await self.send_async(env)
        except TransportError as exc:
            log.debug("send to %s failed: %s", env.dst.hex()[:8], exc)

    async def _serve(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        try:
            while True:
                prefix = await reader.readexactly(4)
                total = frame_length(prefix)
                rest = await reader.readexactly(total - 4)
                env = decode_envelope(prefix + rest, messages.KNOWN_TYPES)
                if env.msg_type == messages.Hello.TYPE:
                    hello = messages.from_envelope(env)
                    self.learned[env.src] = hello.address
                    continue
                self.on_envelope(env)
        except asyncio.IncompleteReadError:
            pass
        except (WireError, ConnectionError) as exc:
            log.warning("dropping connection: %s", exc)
        finally:
            writer.close()

