import hashlib
import itertools
import os
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entropy import codec
from entropy.codec import CodecParams, IntegrityError, NeedMoreSymbols


def test_sha256_vectors():
    # reference digests (coreutils sha256sum)
    assert hashlib.sha256(b"").hexdigest() == \
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    chunk = codec.Chunk(b"\0" * 32, 0, b"\0" * 32)
    assert chunk.chash.hex() == "66687aadf862bd776c8fc18b8e9f8e20089714856ee233b3902a591d0d5f2925"


def test_systematic_rows():
    assert codec.coeff_row(2, 4).tolist() == [0, 0, 1, 0]
    for i in range(16):
        assert codec.coeff_row(i, 16).tolist() == np.eye(16, dtype=np.uint8)[i].tolist()


def test_rows_deterministic_and_distinct():
    assert codec.coeff_row(2**32, 32).tolist() == codec.coeff_row(2**32, 32).tolist()
    rng = random.Random(1)
    for _ in range(1000):
        a, b = rng.sample(range(32, 2**40), 2)
        assert codec.coeff_row(a, 32).tolist() != codec.coeff_row(b, 32).tolist()


def test_row_index_range():
    with pytest.raises(ValueError):
        codec.coeff_row(-1, 4)
    with pytest.raises(ValueError):
        codec.coeff_row(codec.MAX_INDEX, 4)


def test_encode_systematic_and_zero_blocks():
    data = os.urandom(400)
    blocks = codec.split_blocks(data, 4)
    assert codec.encode_symbol(blocks, 1) == blocks[1].tobytes()
    zeros = np.zeros((4, 100), dtype=np.uint8)
    assert all(codec.encode_symbol(zeros, i) == bytes(100) for i in (0, 5, 2**33))


def test_decode_systematic_prefix():
    blocks = codec.split_blocks(os.urandom(1000), 8)
    syms = codec.encode_symbols(blocks, range(8))
    assert (codec.decode_symbols(range(8), syms, 8) == blocks).all()


def test_decode_below_k_needs_more():
    blocks = codec.split_blocks(b"abcdefgh" * 10, 4)
    with pytest.raises(NeedMoreSymbols):
        codec.decode_symbols([5, 6, 7], codec.encode_symbols(blocks, [5, 6, 7]), 4)


def test_unequal_symbols_rejected():
    with pytest.raises(ValueError):
        codec.decode_symbols([0, 1], [b"ab", b"abc"], 2)


def _full_rank_rate(k: int, trials: int, seed: int) -> float:
    rng = random.Random(seed)
    ok = 0
    for _ in range(trials):
        idx = rng.sample(range(k, 2**40), k)
        ok += codec.rank_of(idx, k) == k
    return ok / trials


def test_random_square_success_matches_theory():
    # P(random k x k over GF(256) invertible) = prod_j (1 - 256^-j)
    expected = np.prod([1 - 256.0 ** -j for j in range(1, 5)])
    assert expected == pytest.approx(0.9961, abs=1e-4)
    rate = _full_rank_rate(4, 10_000, seed=3)
    stderr = (expected * (1 - expected) / 10_000) ** 0.5
    assert abs(rate - expected) < 4 * stderr


def test_corrupted_symbol_detected():
    k = 4
    blocks = codec.split_blocks(os.urandom(256), k)
    idx = [10, 11, 12, 13, 14]
    syms = codec.encode_symbols(blocks, idx).copy()
    syms[2, 7] ^= 0x01
    with pytest.raises(IntegrityError) as err:
        codec.decode_symbols(idx, syms, k)
    assert set(err.value.suspects) == set(idx)


def test_corruption_with_exactly_k_caught_by_hash():
    chunk = os.urandom(300)
    frags = codec.inner_encode_many(chunk, [40, 41, 42, 43], 4)
    bad = codec.Fragment(frags[0].chunk_hash, frags[0].stream_index, frags[0].chunk_size,
                         bytes([frags[0].data[0] ^ 1]) + frags[0].data[1:])
    with pytest.raises(IntegrityError):
        codec.inner_decode([bad, *frags[1:]], 4)


# -- outer layer --------------------------------------------------------------

def test_outer_defaults_shape():
    obj = os.urandom(1001)
    chunks = codec.outer_encode(obj, b"k")
    assert len(chunks) == 10
    assert {len(c.data) for c in chunks} == {-(-(1001 + 8) // 8)}
    assert all(c.index >= codec.OUTER_INDEX_BASE for c in chunks)


def test_outer_indices_keyed():
    h = hashlib.sha256(b"obj").digest()
    p = CodecParams()
    assert codec.chunk_indices(b"s", h, p) == codec.chunk_indices(b"s", h, p)
    rng = random.Random(0)
    for _ in range(1000):
        a = codec.chunk_indices(rng.randbytes(16), h, p)
        b = codec.chunk_indices(rng.randbytes(16), h, p)
        assert not set(a) & set(b)


def test_outer_subsets():
    obj = random.Random(11).randbytes(3000)
    chunks = codec.outer_encode(obj, b"secret")
    assert codec.outer_decode(chunks) == obj
    ok = 0
    subsets = list(itertools.combinations(chunks, 8))
    for sub in subsets:
        try:
            ok += codec.outer_decode(sub) == obj
        except NeedMoreSymbols:
            pass
    assert ok / len(subsets) >= 0.96
    for sub in itertools.combinations(chunks, 9):
        assert codec.outer_decode(sub) == obj
    with pytest.raises(NeedMoreSymbols):
        codec.outer_decode(chunks[:7])


def test_outer_hash_mismatch():
    chunks = codec.outer_encode(b"hello world", b"s")
    with pytest.raises(IntegrityError):
        codec.outer_decode(chunks, object_hash=b"\0" * 32)


# -- inner layer --------------------------------------------------------------

def test_inner_systematic_and_threshold():
    chunk = os.urandom(5000)
    frags = codec.inner_encode_many(chunk, range(32), 32)
    assert codec.inner_decode(frags, 32) == chunk
    with pytest.raises(NeedMoreSymbols):
        codec.inner_decode(frags[:31], 32)


def test_inner_k_plus_one_success_rate():
    rng = random.Random(5)
    ok = 0
    for _ in range(1000):
        idx = rng.sample(range(2**40), 33)
        ok += codec.rank_of(idx, 32) == 32
    assert ok / 1000 >= 0.999


def test_redundancy_default():
    assert CodecParams().redundancy == 3.125


def test_params_validation():
    with pytest.raises(ValueError):
        CodecParams(k_inner=10, r_group=5)
    with pytest.raises(ValueError):
        CodecParams(k_outer=11, n_chunks=10)


@settings(max_examples=40)
@given(st.binary(min_size=0, max_size=3000), st.integers(0, 2**32 - 1))
def test_two_layer_roundtrip(obj, seed):
    p = CodecParams(k_inner=4, r_group=10, k_outer=3, n_chunks=5)
    rng = random.Random(seed)
    chunks = codec.outer_encode(obj, b"sec", p)
    rebuilt = []
    for c in rng.sample(chunks, p.k_outer + 1):
        idx = rng.sample(range(2**40), p.r_group)
        frags = codec.inner_encode_many(c.data, idx, p.k_inner, c.chash)
        try:
            data = codec.inner_decode(rng.sample(frags, p.k_inner + 2), p.k_inner)
        except NeedMoreSymbols:
            continue
        rebuilt.append(codec.Chunk(c.object_hash, c.index, data))
    assert codec.outer_decode(rebuilt, p) == obj


@given(st.binary(max_size=500), st.integers(1, 16))
def test_split_blocks_preserves_prefix(data, k):
    blocks = codec.split_blocks(data, k)
    assert blocks.shape[0] == k
    assert blocks.tobytes()[: len(data)] == data
    assert not blocks.tobytes()[len(data):].strip(b"\0")
