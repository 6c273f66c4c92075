import hashlib
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entropy import crypto

# RFC 9381 ECVRF-EDWARDS25519-SHA512-TAI, example 16 (empty alpha)
RFC_SK = "9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60"
RFC_PK = "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a"
RFC_PI = ("8657106690b5526245a92b003bb079ccd1a92130477671f6fc01ad16f26f723f"
          "26f8a57ccaed74ee1b190bed1f479d9727d2d0f9b005a6e456a35d4fb0daab12"
          "68a1b0db10836d9826a528ca76567805")
RFC_BETA = ("90cf1df3b703cce59e2a35b925d411164068269d7b2d29f3301c03dd757876ff"
            "66b71dda49d2de59d03450451af026798e8f81cd2e333de5cdf4f3e140fdd8ae")


@pytest.fixture(scope="module")
def rfc_key():
    return crypto.KeyPair.from_seed(bytes.fromhex(RFC_SK))


def test_rfc_vector(rfc_key):
    assert rfc_key.pk.hex() == RFC_PK
    beta, pi = crypto.vrf_prove(rfc_key, b"")
    assert pi.hex() == RFC_PI
    assert beta.hex() == RFC_BETA
    assert crypto.vrf_verify(rfc_key.pk, b"", pi).hex() == RFC_BETA
    assert crypto.vrf_proof_to_output(pi).hex() == RFC_BETA
    assert crypto.vrf_output(rfc_key, b"").hex() == RFC_BETA


def test_node_id_of_zero_key():
    assert crypto.node_id(bytes(32)).hex() == \
        "66687aadf862bd776c8fc18b8e9f8e20089714856ee233b3902a591d0d5f2925"
    assert crypto.sha256(b"abc") == hashlib.sha256(b"abc").digest()


def test_keys_deterministic_and_distinct():
    assert crypto.keypair_from_int(5).pk == crypto.keypair_from_int(5).pk
    pks = {crypto.keypair_from_int(i).pk for i in range(10_000)}
    assert len(pks) == 10_000


def test_node_id_top_byte_uniform():
    ids = [crypto.node_id(crypto.keypair_from_int(i).pk)[0] for i in range(10_000)]
    counts = np.bincount(ids, minlength=256)
    chi2 = float(((counts - 10_000 / 256) ** 2 / (10_000 / 256)).sum())
    assert chi2 < 347.7   # 0.999 quantile, 255 dof


def test_vrf_output_uniform_and_avalanche():
    kp = crypto.keypair_from_int(3)
    nibbles = []
    for i in range(10_000):
        alpha = i.to_bytes(4, "big")
        nibbles.append(crypto.vrf_output(kp, alpha)[0] >> 4)
        if i < 50:
            assert crypto.vrf_output(kp, alpha) != crypto.vrf_output(kp, alpha + b"\0")
    counts = np.bincount(nibbles, minlength=16)
    chi2 = float(((counts - 625) ** 2 / 625).sum())
    assert chi2 < 37.70   # 0.999 quantile, 15 dof


def test_prove_deterministic():
    kp = crypto.keypair_from_int(9)
    assert crypto.vrf_prove(kp, b"x") == crypto.vrf_prove(kp, b"x")


def test_vrf_soundness():
    kp = crypto.keypair_from_int(4)
    other = crypto.keypair_from_int(5)
    beta, pi = crypto.vrf_prove(kp, b"chunk")
    assert crypto.vrf_verify(kp.pk, b"chunk", pi) == beta
    assert crypto.vrf_verify(kp.pk, b"chunk!", pi) is None
    assert crypto.vrf_verify(other.pk, b"chunk", pi) is None
    assert crypto.vrf_verify(kp.pk, b"chunk", pi[:-1]) is None
    assert crypto.vrf_verify(b"\xff" * 32, b"chunk", pi) is None
    rng = random.Random(0)
    for _ in range(200):
        bit = rng.randrange(len(pi) * 8)
        bad = bytearray(pi)
        bad[bit // 8] ^= 1 << (bit % 8)
        assert crypto.vrf_verify(kp.pk, b"chunk", bytes(bad)) is None


@settings(max_examples=30)
@given(st.binary(max_size=80))
def test_malformed_proofs_rejected_not_raised(junk):
    kp = crypto.keypair_from_int(1)
    assert crypto.vrf_verify(kp.pk, b"a", junk) is None


def test_signatures():
    kp = crypto.keypair_from_int(2)
    sig = crypto.sign(kp, b"payload")
    assert crypto.verify_signature(kp.pk, b"payload", sig)
    assert not crypto.verify_signature(kp.pk, b"payload?", sig)
    assert not crypto.verify_signature(crypto.keypair_from_int(3).pk, b"payload", sig)
    assert not crypto.verify_signature(kp.pk, b"payload", b"short")


def test_key_files(tmp_path):
    kp = crypto.keypair_from_int(7)
    crypto.save_key(kp, tmp_path / "k")
    assert (tmp_path / "k").read_bytes() == kp.seed
    assert crypto.load_key(tmp_path / "k") == kp
    crypto.save_registry({kp.node_id: kp.pk}, tmp_path / "reg.json")
    assert crypto.load_registry(tmp_path / "reg.json") == {kp.node_id: kp.pk}
    (tmp_path / "bad.json").write_text('{"%s": "%s"}' % ("00" * 32, kp.pk.hex()))
    with pytest.raises(ValueError):
        crypto.load_registry(tmp_path / "bad.json")
