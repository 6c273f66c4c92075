import asyncio
import random
import socket

import pytest
from hypothesis import given
from hypothesis import strategies as st

from entropy import crypto
from entropy.codec import Fragment
from entropy.selection import SelectionProof
from entropy.transport import messages as m
from entropy.transport import (HEADER_LEN, MAX_PAYLOAD, Envelope, LatencyModel, SimNetwork,
                               UnknownDestination, WireError, decode_envelope, encode_envelope,
                               run_virtual)
from entropy.transport.sockets import SocketTransport
from entropy.transport.wire import FrameBuffer

A, B = b"\x01" * 32, b"\x02" * 32


def test_empty_frame_is_70_bytes():
    frame = encode_envelope(Envelope(7, A, B))
    assert HEADER_LEN == 70 and len(frame) == 70
    assert int.from_bytes(frame[:4], "big") == 70


@given(st.integers(0, 255), st.binary(min_size=32, max_size=32),
       st.binary(min_size=32, max_size=32), st.binary(max_size=2000))
def test_envelope_roundtrip(t, src, dst, payload):
    env = Envelope(t, src, dst, payload)
    assert decode_envelope(encode_envelope(env)) == env


def test_envelope_errors():
    frame = encode_envelope(Envelope(1, A, B, b"xyz"))
    with pytest.raises(WireError):
        decode_envelope(frame[:-1])
    with pytest.raises(WireError):
        decode_envelope(frame[:50])
    with pytest.raises(WireError):
        decode_envelope((999).to_bytes(4, "big") + frame[4:])
    with pytest.raises(WireError):
        decode_envelope(frame, known_types=frozenset({2}))
    with pytest.raises(WireError):
        decode_envelope(frame[:4] + b"\x09" + frame[5:])
    with pytest.raises(WireError):
        encode_envelope(Envelope(1, A, B, bytes(MAX_PAYLOAD + 1)))
    with pytest.raises(WireError):
        encode_envelope(Envelope(1, A[:5], B))


@given(st.lists(st.binary(max_size=300), max_size=6), st.integers(1, 97))
def test_frame_buffer_reassembles(payloads, cut):
    stream = b"".join(encode_envelope(Envelope(3, A, B, p)) for p in payloads)
    buf = FrameBuffer()
    frames = []
    for i in range(0, len(stream), cut):
        frames += buf.feed(stream[i:i + cut])
    assert [decode_envelope(f).payload for f in frames] == payloads


def _proof():
    kp = crypto.keypair_from_int(1)
    beta, pi = crypto.vrf_prove(kp, b"x")
    return SelectionProof(b"\x05" * 32, kp.pk, int.from_bytes(beta[:32], "big"), pi)


def _samples():
    h = b"\x05" * 32
    frag = Fragment(h, 2**40 + 3, 1234, b"data")
    entry = m.MemberEntry(b"\x07" * 32, "127.0.0.1:9", (1, 2**33), _proof(), 12.5)
    return [
        m.StoreFragment(1, frag, 99.5),
        m.StoreAck(2, h, True, "stored", _proof(), (4, 5)),
        m.StoreAck(2, h, False, "not selected"),
        m.GetFragment(3, h, (1, 2)),
        m.FragmentData(4, h, frag),
        m.FragmentData(4, h, None),
        m.ProofRequest(5, h),
        m.ProofResponse(6, h, _proof(), (9,)),
        m.ProofResponse(6, h, None),
        m.PersistenceClaim(h, 17, _proof(), 3.25, b"s" * 64),
        m.RepairRequest(7, h, 50.0, [entry]),
        m.ChunkCacheRequest(8, h, 2**35),
        m.ChunkCacheResponse(9, h, frag),
        m.MembershipPush(h, 10.0, [entry, entry]),
        m.Evict(h, b"\x09" * 32),
        m.ViewRequest(10, h),
        m.ViewResponse(11, h, 4.0, [entry]),
        m.Hello("127.0.0.1:4000"),
    ]


@pytest.mark.parametrize("msg", _samples(), ids=lambda x: type(x).__name__)
def test_message_roundtrip(msg):
    env = m.to_envelope(msg, A, B)
    back = m.from_envelope(decode_envelope(encode_envelope(env), m.KNOWN_TYPES))
    assert back == msg


def test_message_trailing_bytes_rejected():
    env = m.to_envelope(m.ProofRequest(1, b"\x05" * 32), A, B)
    with pytest.raises(WireError):
        m.decode_payload(env.msg_type, env.payload + b"\0")
    with pytest.raises(WireError):
        m.decode_payload(0xEE, b"")


# -- simulated network --------------------------------------------------------

def _exchange(latency, seed=0, count=50):
    async def main():
        net = SimNetwork(latency, seed=seed)
        got = []
        net.register(A, lambda e: None)
        net.register(B, lambda e: got.append((asyncio.get_running_loop().time(), e.payload)))
        for i in range(count):
            net.send(Envelope(1, A, B, i.to_bytes(2, "big")))
        await asyncio.sleep(100)
        return got, net
    return run_virtual(main())


def test_zero_latency_same_tick():
    got, net = _exchange(LatencyModel())
    assert len(got) == 50 and all(t == 0.0 for t, _ in got)
    assert net.stats.delivered == 50


def test_drop_all_never_delivers():
    got, net = _exchange(LatencyModel(drop=1.0))
    assert got == [] and net.stats.dropped == 50


def test_schedule_deterministic_per_seed():
    lat = LatencyModel(0.1, 5.0, 0.2)
    a, na = _exchange(lat, seed=4)
    b, nb = _exchange(lat, seed=4)
    c, nc = _exchange(lat, seed=5)
    assert a == b and na.trace_digest == nb.trace_digest
    assert na.trace_digest != nc.trace_digest
    assert all(0.1 <= t <= 5.1 for t, _ in a)


def test_unknown_destination_and_crash():
    async def main():
        net = SimNetwork()
        got = []
        net.register(A, lambda e: None)
        net.register(B, got.append)
        with pytest.raises(UnknownDestination):
            net.send(Envelope(1, A, b"\x03" * 32))
        net.crash(B)
        net.send(Envelope(1, A, B))
        await asyncio.sleep(1)
        net.revive(B)
        net.send(Envelope(1, A, B))
        await asyncio.sleep(1)
        return got
    assert len(run_virtual(main())) == 1


def test_latency_model_validation():
    with pytest.raises(ValueError):
        LatencyModel(drop=1.5)
    with pytest.raises(ValueError):
        LatencyModel(base=-1)
    assert LatencyModel(2.0).sample(random.Random(0)) == 2.0


# -- TCP ----------------------------------------------------------------------

def test_socket_transport_roundtrip():
    async def main():
        inbox = asyncio.Queue()
        addrs = {}
        a = SocketTransport(A, "127.0.0.1", 0, addrs.get, lambda e: None)
        b = SocketTransport(B, "127.0.0.1", 0, addrs.get, inbox.put_nowait)
        await a.start()
        await b.start()
        addrs[A], addrs[B] = a.address, b.address
        big = bytes(range(256)) * 4096
        await a.send_async(Envelope(5, A, B, big))
        await a.send_async(Envelope(6, A, B, b""))
        first = await asyncio.wait_for(inbox.get(), 5)
        second = await asyncio.wait_for(inbox.get(), 5)
        assert b.learned[A] == a.address
        with pytest.raises(UnknownDestination):
            a.send(Envelope(1, A, b"\x03" * 32))
        await a.close()
        await b.close()
        return first, second
    first, second = asyncio.run(main())
    assert first.payload == bytes(range(256)) * 4096 and first.msg_type == 5
    assert second.msg_type == 6


def test_socket_connect_refused_surfaces():
    from entropy.transport import TransportError

    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()

    async def main():
        t = SocketTransport(A, "127.0.0.1", 0, lambda _: f"127.0.0.1:{port}", lambda e: None)
        await t.start()
        try:
            with pytest.raises(TransportError):
                await t.send_async(Envelope(1, A, B))
        finally:
            await t.close()
    asyncio.run(main())
