"""Node identities, Ed25519 signatures and an ECVRF over edwards25519.

The VRF is ECVRF-EDWARDS25519-SHA512-TAI (RFC 9381). Group operations come
from libsodium through PyNaCl; hashing, scalar arithmetic and the point
decoding check live here. The same 32-byte seed backs both the signing key
and the VRF key, so a node has one public key and ``NodeId = SHA-256(pk)``.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import nacl.bindings as sodium
import nacl.exceptions
from nacl.signing import SigningKey, VerifyKey

# curve constants
_P = 2**255 - 19
_L = 2**252 + 27742317777372353535851937790883648493
_D = (-121665 * pow(121666, _P - 2, _P)) % _P

_SUITE = b"\x03"
_PT_LEN = 32
_C_LEN = 16
_Q_LEN = 32
PROOF_LEN = _PT_LEN + _C_LEN + _Q_LEN  # 80
OUTPUT_LEN = 64


class VRFError(Exception):
    pass


@dataclass(frozen=True)
class KeyPair:
    seed: bytes
    pk: bytes

    @classmethod
    def from_seed(cls, seed: bytes) -> "KeyPair":
        if len(seed) != 32:
            raise ValueError("seed must be 32 bytes")
        return cls(seed, bytes(SigningKey(seed).verify_key))

    @property
    def node_id(self) -> bytes:
        return node_id(self.pk)


def keygen() -> KeyPair:
    """Fresh keypair from the OS CSPRNG."""
    return KeyPair.from_seed(os.urandom(32))


def keypair_from_int(seed: int) -> KeyPair:
    """Deterministic keypair for simulations and tests."""
    return KeyPair.from_seed(hashlib.sha256(b"entropy/test-key" + seed.to_bytes(8, "big")).digest())


def node_id(pk: bytes) -> bytes:
    return hashlib.sha256(pk).digest()


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


# -- signatures ---------------------------------------------------------------

def sign(kp: KeyPair, msg: bytes) -> bytes:
    return SigningKey(kp.seed).sign(msg).signature


def verify_signature(pk: bytes, msg: bytes, sig: bytes) -> bool:
    try:
        VerifyKey(pk).verify(msg, sig)
        return True
    except (nacl.exceptions.BadSignatureError, nacl.exceptions.ValueError,
            nacl.exceptions.TypeError, ValueError):
        return False


# -- ECVRF --------------------------------------------------------------------

def _canonical(s: bytes) -> bool:
    """Edge cases of RFC 8032 decoding that libsodium lets through."""
    if len(s) != 32:
        return False
    y = int.from_bytes(s, "little") & ((1 << 255) - 1)
    if y >= _P:
        return False
    # y = +-1 means x = 0, which must not carry a sign bit
    return not (s[31] & 0x80 and y in (1, _P - 1))


def _add(a: bytes, b: bytes) -> bytes:
    return sodium.crypto_core_ed25519_add(a, b)


def _sub(a: bytes, b: bytes) -> bytes:
    return sodium.crypto_core_ed25519_sub(a, b)


def _mul(scalar: int, point: bytes) -> bytes:
    return sodium.crypto_scalarmult_ed25519_noclamp((scalar % _L).to_bytes(32, "little"), point)


def _mul_base(scalar: int) -> bytes:
    return sodium.crypto_scalarmult_ed25519_base_noclamp((scalar % _L).to_bytes(32, "little"))


def _clear_cofactor(p: bytes) -> bytes:
    for _ in range(3):
        p = _add(p, p)
    return p


def _decode_clear(s: bytes) -> bytes | None:
    """Cofactor-cleared point for ``s``, or None when ``s`` does not decode.

    libsodium refuses to add a string that is not a curve point, which is the
    decoding test we need; doing it there avoids a modular square root check
    in Python.
    """
    if not _canonical(s):
        return None
    try:
        return _clear_cofactor(s)
    except nacl.exceptions.RuntimeError:
        return None


def _hash_to_curve(pk: bytes, alpha: bytes) -> bytes:
    prefix = _SUITE + b"\x01" + pk + alpha
    for ctr in range(256):
        h = hashlib.sha512(prefix + bytes([ctr]) + b"\x00").digest()[:32]
        point = _decode_clear(h)
        if point is not None:
            return point
    raise VRFError("hash to curve failed")


def _challenge(*points: bytes) -> int:
    h = hashlib.sha512(_SUITE + b"\x02" + b"".join(points) + b"\x00").digest()
    return int.from_bytes(h[:_C_LEN], "little")


def _secret_scalar(seed: bytes) -> tuple[int, bytes]:
    h = hashlib.sha512(seed).digest()
    x = bytearray(h[:32])
    x[0] &= 248
    x[31] &= 127
    x[31] |= 64
    return int.from_bytes(bytes(x), "little"), h[32:]


def _output(cleared_gamma: bytes) -> bytes:
    return hashlib.sha512(_SUITE + b"\x03" + cleared_gamma + b"\x00").digest()


def vrf_output(kp: KeyPair, alpha: bytes) -> bytes:
    """The 64-byte VRF output only; cheaper than a full proof."""
    x, _ = _secret_scalar(kp.seed)
    return _output(_clear_cofactor(_mul(x, _hash_to_curve(kp.pk, alpha))))


def vrf_prove(kp: KeyPair, alpha: bytes) -> tuple[bytes, bytes]:
    """Return ``(beta, pi)``: the 64-byte output and 80-byte proof."""
    x, prefix = _secret_scalar(kp.seed)
    h = _hash_to_curve(kp.pk, alpha)
    gamma = _mul(x, h)
    nonce = int.from_bytes(hashlib.sha512(prefix + h).digest(), "little") % _L
    c = _challenge(kp.pk, h, gamma, _mul_base(nonce), _mul(nonce, h))
    s = (nonce + c * x) % _L
    pi = gamma + c.to_bytes(_C_LEN, "little") + s.to_bytes(_Q_LEN, "little")
    return _output(_clear_cofactor(gamma)), pi


def vrf_proof_to_output(pi: bytes) -> bytes:
    cleared = _decode_clear(pi[:_PT_LEN]) if len(pi) == PROOF_LEN else None
    if cleared is None:
        raise VRFError("malformed proof")
    return _output(cleared)


def vrf_verify(pk: bytes, alpha: bytes, pi: bytes) -> bytes | None:
    """Check a proof; returns beta on success and ``None`` otherwise."""
    try:
        if len(pk) != 32 or len(pi) != PROOF_LEN:
            return None
        if not _canonical(pk) or not sodium.crypto_core_ed25519_is_valid_point(pk):
            return None
        gamma = pi[:_PT_LEN]
        cleared = _decode_clear(gamma)
        if cleared is None:
            return None
        c = int.from_bytes(pi[_PT_LEN:_PT_LEN + _C_LEN], "little")
        s = int.from_bytes(pi[_PT_LEN + _C_LEN:], "little")
        if s >= _L:
            return None
        h = _hash_to_curve(pk, alpha)
        u = _sub(_mul_base(s), _mul(c, pk))
        v = _sub(_mul(s, h), _mul(c, gamma))
        if _challenge(pk, h, gamma, u, v) != c:
            return None
        return _output(cleared)
    except (nacl.exceptions.RuntimeError, nacl.exceptions.ValueError,
            nacl.exceptions.TypeError, VRFError, ValueError):
        return None


# -- key material on disk -----------------------------------------------------

def save_key(kp: KeyPair, path: str | Path) -> None:
    path = Path(path)
    path.write_bytes(kp.seed)
    try:
        path.chmod(0o600)
    except OSError:
        pass


def load_key(path: str | Path) -> KeyPair:
    """Read a raw 32-byte seed; a 64-char hex file is accepted as well."""
    raw = Path(path).read_bytes()
    if len(raw) != 32:
        raw = bytes.fromhex(raw.decode("ascii").strip())
    return KeyPair.from_seed(raw)


def load_registry(path: str | Path) -> dict[bytes, bytes]:
    """NodeId -> pk map from a JSON object of hex strings; checks bindings."""
    raw = json.loads(Path(path).read_text())
    out: dict[bytes, bytes] = {}
    for nid_hex, pk_hex in raw.items():
        nid, pk = bytes.fromhex(nid_hex), bytes.fromhex(pk_hex)
        if node_id(pk) != nid:
            raise ValueError(f"registry entry {nid_hex[:16]} does not match its key")
        out[nid] = pk
    return out


def save_registry(entries: dict[bytes, bytes], path: str | Path) -> None:
    Path(path).write_text(json.dumps({k.hex(): v.hex() for k, v in entries.items()}, indent=2))
