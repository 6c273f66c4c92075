"""Arithmetic in GF(2^8) with the AES reduction polynomial x^8+x^4+x^3+x+1.

Everything is table driven. ``MUL`` is the full 256x256 product table so that
numpy fancy indexing can multiply whole arrays at once; it costs 64 KiB.
"""

from __future__ import annotations

import numpy as np

POLY = 0x11B
# 0x02 has order 51 under 0x11B, so the log/exp tables use 0x03.
GENERATOR = 0x03


def mul_slow(a: int, b: int) -> int:
    """Carry-less multiply with reduction, bit by bit. Reference only."""
    out = 0
    while b:
        if b & 1:
            out ^= a
        a <<= 1
        if a & 0x100:
            a ^= POLY
        b >>= 1
    return out


def _build_tables() -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    exp = np.zeros(512, dtype=np.uint8)
    log = np.zeros(256, dtype=np.int32)
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x = mul_slow(x, GENERATOR)
    if x != 1 or len(set(exp[:255].tolist())) != 255:
        raise RuntimeError("generator is not primitive")
    exp[255:510] = exp[:255]

    idx = log[1:, None] + log[None, 1:]
    mul = np.zeros((256, 256), dtype=np.uint8)
    mul[1:, 1:] = exp[idx]

    inv = np.zeros(256, dtype=np.uint8)
    inv[1:] = exp[(255 - log[1:]) % 255]
    return exp, log, mul, inv


EXP, LOG, MUL, INV = _build_tables()


def mul(a: int, b: int) -> int:
    return int(MUL[a, b])


def inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("0 has no inverse in GF(256)")
    return int(INV[a])


def div(a: int, b: int) -> int:
    return mul(a, inv(b))


def add(a: int, b: int) -> int:
    return a ^ b


def scale(row: np.ndarray, c: int) -> np.ndarray:
    """Multiply every byte of ``row`` by the scalar ``c``."""
    return MUL[c][row]


_LOW7 = np.uint64(0x7F7F7F7F7F7F7F7F)
_LSB = np.uint64(0x0101010101010101)
_RED = np.uint64(POLY & 0xFF)
_WIDE = 512


def _xtime64(x: np.ndarray, out: np.ndarray, tmp: np.ndarray) -> None:
    """Multiply each of the eight bytes packed in every word by 0x02."""
    np.right_shift(x, np.uint64(7), out=tmp)
    tmp &= _LSB
    tmp *= _RED
    np.bitwise_and(x, _LOW7, out=out)
    out <<= np.uint64(1)
    out ^= tmp


def _matmul_gather(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, k = a.shape
    out = np.zeros((m, b.shape[1]), dtype=np.uint8)
    for j in range(k):
        col = a[:, j]
        if not col.any():
            continue
        out ^= MUL[col][:, b[j]]
    return out


def _matmul_planes(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # c*x is the XOR of (2^i * x) over the set bits i of c; the doublings run
    # on eight bytes per uint64 word, far cheaper than a byte gather.
    m, k = a.shape
    width = b.shape[1]
    words = -(-width // 8)
    buf = np.zeros((k, words * 8), dtype=np.uint8)
    buf[:, :width] = b
    src = buf.view(np.uint64)
    out = np.zeros((m, words), dtype=np.uint64)
    planes = np.empty((2, words), dtype=np.uint64)
    tmp = np.empty(words, dtype=np.uint64)
    for j in range(k):
        col = a[:, j]
        top = int(col.max())
        plane = src[j]
        for bit in range(top.bit_length()):
            rows = np.flatnonzero((col >> bit) & 1)
            if len(rows) == m:
                out ^= plane
            else:
                for r in rows:
                    row = out[r]
                    row ^= plane
            if bit < 7:
                nxt = planes[bit & 1]
                _xtime64(plane, nxt, tmp)
                plane = nxt
    return np.ascontiguousarray(out.view(np.uint8)[:, :width])


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product over GF(256); ``a`` is (m, k), ``b`` is (k, L).

    Narrow operands use the product table directly; wide ones switch to
    word-parallel doubling.
    """
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    m, k = a.shape
    if b.shape[0] != k:
        raise ValueError(f"shape mismatch {a.shape} x {b.shape}")
    if b.shape[1] >= _WIDE:
        return _matmul_planes(a, b)
    return _matmul_gather(a, b)
