"""Elliptic-curve arithmetic over secp160k1, ECDSA, ECDH, and block cipher.

Implements the group law and double-and-add scalar multiplication directly
on the SEC 2 "secp160k1" Koblitz curve (y^2 = x^3 + 7 over F_p, 80-bit
security level). Signatures are ECDSA with SHA-256 truncated to 160 bits;
shared keys hash the ECDH x-coordinate to 256 bits. Pseudo-identity
ciphertexts are a single 256-bit AES-256 block so wire accounting stays
fixed-size.

This is a research simulator: no constant-time hardening is attempted.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import CryptoError

SCALAR_BYTES = 20
POINT_BYTES = 40  # x || y, big-endian
CIPHER_BLOCK_BYTES = 32  # one 256-bit pseudo-identity block


@dataclass(frozen=True)
class CurveParams:
    """Short-Weierstrass domain parameters y^2 = x^3 + a*x + b mod p."""

    a: int
    b: int
    p: int
    gx: int
    gy: int
    q: int  # order of g

    @property
    def g(self) -> "Point":
        return Point(self.gx, self.gy)


# SEC 2 secp160k1 domain parameters.
SECP160K1 = CurveParams(
    a=0x0,
    b=0x7,
    p=0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEFFFFAC73,
    gx=0x3B4C382CE37AA192A4019E763036F4F5DD4D7EBB,
    gy=0x938CF935318FDCED6BC28286531733C3F03C4FEE,
    q=0x0100000000000000000001B8FA16DFAB9ACA16B6B3,
)


@dataclass(frozen=True)
class Point:
    """Affine curve point; ``Point.identity()`` is the group identity."""

    x: int | None
    y: int | None

    @classmethod
    def identity(cls) -> "Point":
        return cls(None, None)

    @property
    def is_identity(self) -> bool:
        return self.x is None


@dataclass(frozen=True)
class Signature:
    r: int
    s: int


@dataclass(frozen=True)
class KeyPair:
    sk: int
    pk: Point


def on_curve(pt: Point, curve: CurveParams = SECP160K1) -> bool:
    if pt.is_identity:
        return True
    if not (0 <= pt.x < curve.p and 0 <= pt.y < curve.p):
        return False
    return (pt.y * pt.y - (pt.x**3 + curve.a * pt.x + curve.b)) % curve.p == 0


def _require_on_curve(pt: Point, curve: CurveParams) -> None:
    if not on_curve(pt, curve):
        raise CryptoError(f"point {pt} is not on the curve")


def point_neg(pt: Point, curve: CurveParams = SECP160K1) -> Point:
    if pt.is_identity:
        return pt
    return Point(pt.x, (-pt.y) % curve.p)


def point_add(p1: Point, p2: Point, curve: CurveParams = SECP160K1) -> Point:
    """Group law, covering identity, inverse-pair, and doubling cases."""
    _require_on_curve(p1, curve)
    _require_on_curve(p2, curve)
    if p1.is_identity:
        return p2
    if p2.is_identity:
        return p1
    p = curve.p
    if p1.x == p2.x:
        if (p1.y + p2.y) % p == 0:
            return Point.identity()
        # Doubling: slope = (3x^2 + a) / (2y)
        slope = (3 * p1.x * p1.x + curve.a) * pow(2 * p1.y, -1, p) % p
    else:
        slope = (p2.y - p1.y) * pow(p2.x - p1.x, -1, p) % p
    x3 = (slope * slope - p1.x - p2.x) % p
    y3 = (slope * (p1.x - x3) - p1.y) % p
    return Point(x3, y3)


def point_mul(k: int, pt: Point, curve: CurveParams = SECP160K1) -> Point:
    """Double-and-add scalar multiplication; k = 0 yields the identity."""
    if k < 0:
        raise CryptoError("scalar must be non-negative")
    _require_on_curve(pt, curve)
    result = Point.identity()
    addend = pt
    while k:
        if k & 1:
            result = point_add(result, addend, curve)
        addend = point_add(addend, addend, curve)
        k >>= 1
    return result


def check_curve(curve: CurveParams = SECP160K1) -> None:
    """Startup sanity: generator on curve and q*g = identity."""
    if not on_curve(curve.g, curve):
        raise CryptoError("generator is not on the curve")
    if not point_mul(curve.q, curve.g, curve).is_identity:
        raise CryptoError("q*g is not the identity")


def gen_keypair(rng: random.Random, curve: CurveParams = SECP160K1) -> KeyPair:
    sk = rng.randrange(1, curve.q)
    return KeyPair(sk=sk, pk=point_mul(sk, curve.g, curve))


def hash256(*parts: bytes) -> bytes:
    h = hashlib.sha256()
    for part in parts:
        h.update(part)
    return h.digest()


def _msg_to_int(message: bytes, curve: CurveParams) -> int:
    # Leftmost 160 bits of SHA-256, the usual ECDSA truncation to curve size.
    return int.from_bytes(hash256(message)[:SCALAR_BYTES], "big") % curve.q


def sign(
    sk: int, message: bytes, curve: CurveParams = SECP160K1, rng: random.Random | None = None
) -> Signature:
    """ECDSA signature with a fresh per-signature nonce."""
    if not message:
        raise CryptoError("refusing to sign an empty message")
    if not 1 <= sk < curve.q:
        raise CryptoError("private key out of range")
    rng = rng or random.Random()
    e = _msg_to_int(message, curve)
    while True:
        k = rng.randrange(1, curve.q)
        rp = point_mul(k, curve.g, curve)
        r = rp.x % curve.q
        if r == 0:
            continue
        s = pow(k, -1, curve.q) * (e + r * sk) % curve.q
        if s == 0:
            continue
        return Signature(r=r, s=s)


def verify(
    pk: Point, message: bytes, sig: Signature, curve: CurveParams = SECP160K1
) -> bool:
    if pk.is_identity or not on_curve(pk, curve):
        return False
    if not (1 <= sig.r < curve.q and 1 <= sig.s < curve.q):
        return False
    e = _msg_to_int(message, curve)
    w = pow(sig.s, -1, curve.q)
    u1 = e * w % curve.q
    u2 = sig.r * w % curve.q
    x = point_add(
        point_mul(u1, curve.g, curve), point_mul(u2, pk, curve), curve
    )
    if x.is_identity:
        return False
    return x.x % curve.q == sig.r


def ecdh_shared(sk_self: int, pk_peer: Point, curve: CurveParams = SECP160K1) -> bytes:
    """256-bit key material hashed from the shared point's x-coordinate."""
    if pk_peer.is_identity:
        raise CryptoError("peer public key is the identity")
    _require_on_curve(pk_peer, curve)
    if not 1 <= sk_self < curve.q:
        raise CryptoError("private key out of range")
    shared = point_mul(sk_self, pk_peer, curve)
    if shared.is_identity:
        raise CryptoError("shared point degenerated to the identity")
    return hash256(b"ecdh", shared.x.to_bytes(SCALAR_BYTES, "big"))


def encode_point(pt: Point) -> bytes:
    if pt.is_identity:
        raise CryptoError("identity point has no wire encoding")
    return pt.x.to_bytes(SCALAR_BYTES, "big") + pt.y.to_bytes(SCALAR_BYTES, "big")


def decode_point(data: bytes, curve: CurveParams = SECP160K1) -> Point:
    if len(data) != POINT_BYTES:
        raise CryptoError(f"point encoding must be {POINT_BYTES} bytes")
    pt = Point(
        int.from_bytes(data[:SCALAR_BYTES], "big"),
        int.from_bytes(data[SCALAR_BYTES:], "big"),
    )
    _require_on_curve(pt, curve)
    return pt


def encode_scalar(value: int) -> bytes:
    return value.to_bytes(SCALAR_BYTES, "big")


# Single-block cipher layout: data || zero pad || len(nonce) || len(plaintext).
_MAX_BLOCK_DATA = CIPHER_BLOCK_BYTES - 2


def sym_encrypt(key: bytes, plaintext: bytes, nonce: bytes = b"") -> bytes:
    """Encrypt ``plaintext`` (plus ``nonce`` material) into one 256-bit block."""
    if len(key) != 32:
        raise CryptoError("key must be 256 bits")
    data = plaintext + nonce
    if len(data) > _MAX_BLOCK_DATA:
        raise CryptoError(
            f"plaintext+nonce must fit in {_MAX_BLOCK_DATA} bytes, got {len(data)}"
        )
    block = (
        data
        + b"\x00" * (_MAX_BLOCK_DATA - len(data))
        + bytes([len(nonce), len(plaintext)])
    )
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return enc.update(block) + enc.finalize()


def sym_decrypt(key: bytes, ciphertext: bytes) -> tuple[bytes, bytes]:
    """Invert :func:`sym_encrypt`; returns (plaintext, nonce).

    A wrong key almost surely breaks the length/padding structure and raises.
    """
    if len(key) != 32:
        raise CryptoError("key must be 256 bits")
    if len(ciphertext) != CIPHER_BLOCK_BYTES:
        raise CryptoError(f"ciphertext must be {CIPHER_BLOCK_BYTES} bytes")
    dec = Cipher(algorithms.AES(key), modes.ECB()).decryptor()
    block = dec.update(ciphertext) + dec.finalize()
    nonce_len, plain_len = block[-2], block[-1]
    if plain_len + nonce_len > _MAX_BLOCK_DATA:
        raise CryptoError("decryption failed: corrupt length fields")
    pad = block[plain_len + nonce_len : _MAX_BLOCK_DATA]
    if any(pad):
        raise CryptoError("decryption failed: corrupt padding")
    return block[:plain_len], block[plain_len : plain_len + nonce_len]
