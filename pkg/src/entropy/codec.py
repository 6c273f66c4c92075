"""Two-layer random linear fountain code over GF(256).

Both layers use the same systematic code. Symbol ``i`` of a stream built from
``k`` source blocks is ``sum_j c_ij * block_j`` where row ``c_i`` is the unit
vector ``e_i`` for ``i < k`` and a pseudo-random nonzero row otherwise. The
row depends only on ``(i, k)``, so any party can rebuild it.

The outer layer turns an object into ``n_chunks`` chunks at secret,
pseudo-random stream indices. The inner layer turns one chunk into an
unbounded stream of fragments; groups hold ``r_group`` of them and any
``k_inner`` independent ones rebuild the chunk.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import gf256
from .gf256 import INV, MUL

MAX_INDEX = 2**64
OUTER_INDEX_BASE = 2**32
_ROW_DOMAIN = b"entropy/coeff/v1"
_OUTER_DOMAIN = b"entropy/outer-index/v1"
_LEN_PREFIX = 8


class CodecError(Exception):
    pass


class NeedMoreSymbols(CodecError):
    """The supplied symbols do not span the source space yet."""

    def __init__(self, rank: int, k: int):
        super().__init__(f"rank {rank} < {k}: need more symbols")
        self.rank = rank
        self.k = k


class IntegrityError(CodecError):
    """Decoded data failed a consistency or hash check."""

    def __init__(self, message: str, suspects: Sequence[int] = ()):
        super().__init__(message)
        self.suspects = tuple(suspects)


@dataclass(frozen=True)
class CodecParams:
    k_inner: int = 32
    r_group: int = 80
    k_outer: int = 8
    n_chunks: int = 10

    def __post_init__(self):
        if min(self.k_inner, self.r_group, self.k_outer, self.n_chunks) < 1:
            raise ValueError("codec parameters must be positive")
        if self.k_inner > self.r_group:
            raise ValueError("k_inner must not exceed r_group")
        if self.k_outer > self.n_chunks:
            raise ValueError("k_outer must not exceed n_chunks")
        if self.n_chunks > OUTER_INDEX_BASE:
            raise ValueError("n_chunks too large")

    @property
    def redundancy(self) -> float:
        """Stored bytes per object byte when every group is full."""
        return (self.n_chunks / self.k_outer) * (self.r_group / self.k_inner)


@dataclass(frozen=True)
class Chunk:
    object_hash: bytes
    index: int
    data: bytes
    chash: bytes = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "chash", hashlib.sha256(self.data).digest())


@dataclass(frozen=True)
class Fragment:
    chunk_hash: bytes
    stream_index: int
    chunk_size: int
    data: bytes


# -- coefficient rows ---------------------------------------------------------

def coeff_row(index: int, k: int) -> np.ndarray:
    """Coefficient row for stream ``index`` of a code with ``k`` sources."""
    if not 0 <= index < MAX_INDEX:
        raise ValueError(f"stream index {index} out of range")
    if k < 1:
        raise ValueError("k must be positive")
    row = np.zeros(k, dtype=np.uint8)
    if index < k:
        row[index] = 1
        return row
    seed = _ROW_DOMAIN + index.to_bytes(8, "big") + k.to_bytes(4, "big")
    attempt = 0
    while True:
        material = seed if attempt == 0 else seed + attempt.to_bytes(4, "big")
        row = np.frombuffer(hashlib.shake_128(material).digest(k), dtype=np.uint8)
        if row.any():
            return row.copy()
        attempt += 1


def coeff_matrix(indices: Sequence[int], k: int) -> np.ndarray:
    if len(indices) == 0:
        return np.zeros((0, k), dtype=np.uint8)
    return np.stack([coeff_row(int(i), k) for i in indices])


# -- block level encode/decode ------------------------------------------------

def split_blocks(data: bytes, k: int) -> np.ndarray:
    """Zero-pad ``data`` to a multiple of ``k`` and view it as (k, L)."""
    size = max(1, -(-len(data) // k))
    buf = np.zeros(k * size, dtype=np.uint8)
    buf[: len(data)] = np.frombuffer(data, dtype=np.uint8)
    return buf.reshape(k, size)


def encode_symbols(blocks: np.ndarray, indices: Sequence[int]) -> np.ndarray:
    blocks = np.asarray(blocks, dtype=np.uint8)
    return gf256.matmul(coeff_matrix(indices, blocks.shape[0]), blocks)


def encode_symbol(blocks: np.ndarray, index: int) -> bytes:
    return encode_symbols(blocks, [index])[0].tobytes()


def _eliminate(a: np.ndarray) -> tuple[np.ndarray, int]:
    """Gauss-Jordan on [A | I]. Returns the reduced matrix and rank of A."""
    m, k = a.shape
    work = np.concatenate([a, np.eye(m, dtype=np.uint8)], axis=1)
    rank = 0
    for col in range(k):
        if rank == m:
            break
        nz = np.flatnonzero(work[rank:, col])
        if nz.size == 0:
            continue
        piv = rank + int(nz[0])
        if piv != rank:
            work[[rank, piv]] = work[[piv, rank]]
        work[rank] = MUL[INV[work[rank, col]]][work[rank]]
        factors = work[:, col].copy()
        factors[rank] = 0
        rows = np.flatnonzero(factors)
        if rows.size:
            work[rows] ^= MUL[factors[rows][:, None], work[rank][None, :]]
        rank += 1
    return work, rank


def rank_of(indices: Sequence[int], k: int) -> int:
    """Rank of the coefficient rows for ``indices``; no data involved."""
    if len(indices) == 0:
        return 0
    return _eliminate(coeff_matrix(indices, k))[1]


def decode_symbols(indices: Sequence[int], symbols: Sequence[bytes] | np.ndarray,
                   k: int) -> np.ndarray:
    """Recover the (k, L) source blocks from any spanning set of symbols.

    With more than ``k`` symbols the surplus rows are used as a parity check;
    a mismatch raises :class:`IntegrityError` naming every supplied index,
    since a single check cannot tell which symbol is bad.
    """
    indices = [int(i) for i in indices]
    if len(indices) != len(symbols):
        raise ValueError("indices and symbols differ in length")
    if len(set(indices)) != len(indices):
        raise ValueError("duplicate stream indices")
    if len(indices) < k:
        raise NeedMoreSymbols(rank_of(indices, k), k)
    if isinstance(symbols, np.ndarray):
        data = np.asarray(symbols, dtype=np.uint8)
    else:
        lengths = {len(s) for s in symbols}
        if len(lengths) != 1:
            raise ValueError("symbols differ in length")
        data = np.frombuffer(b"".join(symbols), dtype=np.uint8).reshape(len(symbols), -1)

    work, rank = _eliminate(coeff_matrix(indices, k))
    if rank < k:
        raise NeedMoreSymbols(rank, k)
    # rows past k are a parity check; one product covers both
    product = gf256.matmul(work[:, k:], data)
    if product[k:].any():
        raise IntegrityError("symbols are mutually inconsistent", indices)
    return product[:k]


# -- outer layer --------------------------------------------------------------

def _frame(obj: bytes, k: int) -> np.ndarray:
    return split_blocks(len(obj).to_bytes(_LEN_PREFIX, "little") + obj, k)


def _unframe(blocks: np.ndarray) -> bytes:
    raw = blocks.tobytes()
    if len(raw) < _LEN_PREFIX:
        raise IntegrityError("decoded object too short for its length prefix")
    size = int.from_bytes(raw[:_LEN_PREFIX], "little")
    if size > len(raw) - _LEN_PREFIX:
        raise IntegrityError("length prefix exceeds decoded data")
    return raw[_LEN_PREFIX: _LEN_PREFIX + size]


def chunk_indices(secret: bytes, object_hash: bytes, params: CodecParams) -> list[int]:
    """Secret, distinct, non-systematic outer stream indices for an object."""
    span = MAX_INDEX - OUTER_INDEX_BASE
    out: list[int] = []
    seen: set[int] = set()
    for j in range(params.n_chunks):
        retry = 0
        while True:
            msg = _OUTER_DOMAIN + object_hash + j.to_bytes(4, "big")
            if retry:
                msg += retry.to_bytes(4, "big")
            tag = hmac.new(secret, msg, hashlib.sha256).digest()
            idx = OUTER_INDEX_BASE + int.from_bytes(tag[:8], "big") % span
            if idx not in seen:
                break
            retry += 1
        seen.add(idx)
        out.append(idx)
    return out


def outer_encode(obj: bytes, secret: bytes, params: CodecParams = CodecParams()) -> list[Chunk]:
    object_hash = hashlib.sha256(obj).digest()
    blocks = _frame(obj, params.k_outer)
    indices = chunk_indices(secret, object_hash, params)
    symbols = encode_symbols(blocks, indices)
    return [Chunk(object_hash, idx, sym.tobytes()) for idx, sym in zip(indices, symbols)]


def outer_decode(chunks: Iterable[Chunk], params: CodecParams = CodecParams(),
                 object_hash: bytes | None = None) -> bytes:
    chunks = list(chunks)
    if object_hash is None and chunks:
        object_hash = chunks[0].object_hash
    blocks = decode_symbols([c.index for c in chunks], [c.data for c in chunks],
                            params.k_outer)
    obj = _unframe(blocks)
    if object_hash is not None and hashlib.sha256(obj).digest() != object_hash:
        raise IntegrityError("object hash mismatch", [c.index for c in chunks])
    return obj


# -- inner layer --------------------------------------------------------------

def inner_encode_many(chunk: bytes, indices: Sequence[int], k: int,
                      chunk_hash: bytes | None = None) -> list[Fragment]:
    chash = chunk_hash if chunk_hash is not None else hashlib.sha256(chunk).digest()
    symbols = encode_symbols(split_blocks(chunk, k), indices)
    return [Fragment(chash, int(i), len(chunk), s.tobytes())
            for i, s in zip(indices, symbols)]


def inner_encode(chunk: bytes, index: int, k: int,
                 chunk_hash: bytes | None = None) -> Fragment:
    return inner_encode_many(chunk, [index], k, chunk_hash)[0]


def inner_decode(fragments: Sequence[Fragment], k: int,
                 chunk_hash: bytes | None = None) -> bytes:
    """Rebuild and hash-check a chunk from its fragments."""
    if not fragments:
        raise NeedMoreSymbols(0, k)
    chash = chunk_hash if chunk_hash is not None else fragments[0].chunk_hash
    size = fragments[0].chunk_size
    if any(f.chunk_hash != chash or f.chunk_size != size for f in fragments):
        raise ValueError("fragments belong to different chunks")
    blocks = decode_symbols([f.stream_index for f in fragments],
                            [f.data for f in fragments], k)
    chunk = blocks.tobytes()[:size]
    if hashlib.sha256(chunk).digest() != chash:
        raise IntegrityError("chunk hash mismatch", [f.stream_index for f in fragments])
    return chunk
