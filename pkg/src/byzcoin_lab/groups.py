"""Prime-order group backends and Schnorr primitives for collective signing.

Two interchangeable backends:

* ``ToyGroup`` -- the order-11 subgroup of Z_23* generated by 2.  Small
  enough that completeness, soundness and aggregation identities can be
  checked exhaustively, and every signing step can be verified by hand.
* ``Ed25519Group`` -- the prime-order subgroup of edwards25519, giving
  production-size keys and signatures.

All operations take and return canonical byte encodings, so values can be
hashed, serialized and compared bit-exactly.  Scalars are plain ints in
``[0, order)`` and encode little-endian at the backend's fixed width.
Everything here is a pure function of its inputs; there is no shared
mutable state.  Constant-time behaviour is explicitly not a goal.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass

# Domain-separation tag prepended to every signing challenge hash.
CHALLENGE_TAG = b"\x01"


class DecodeError(ValueError):
    """Raised when bytes do not encode a valid group element."""


@dataclass(frozen=True)
class KeyPair:
    secret: int
    public: bytes


class ToyGroup:
    """Schnorr group with p=23, q=11, generator 2.

    Elements are the 11 quadratic residues mod 23, encoded as one byte.
    """

    name = "toy"
    order = 11
    modulus = 23
    generator = 2
    scalar_bytes = 1
    element_bytes = 1
    security = "toy"

    def identity(self) -> bytes:
        return b"\x01"

    def base_pow(self, exponent: int) -> bytes:
        return self._encode(pow(self.generator, exponent % self.order, self.modulus))

    def mul(self, a: bytes, b: bytes) -> bytes:
        return self._encode(self._decode(a) * self._decode(b) % self.modulus)

    def pow(self, a: bytes, exponent: int) -> bytes:
        return self._encode(pow(self._decode(a), exponent % self.order, self.modulus))

    def inv(self, a: bytes) -> bytes:
        return self._encode(pow(self._decode(a), self.modulus - 2, self.modulus))

    def is_valid(self, a: bytes) -> bool:
        try:
            self._decode(a)
        except DecodeError:
            return False
        return True

    def _encode(self, value: int) -> bytes:
        return bytes([value])

    def _decode(self, data: bytes) -> int:
        if len(data) != 1:
            raise DecodeError(f"toy element must be 1 byte, got {len(data)}")
        value = data[0]
        # Subgroup membership: x^q == 1 mod p and x != 0.
        if value == 0 or value >= self.modulus or pow(value, self.order, self.modulus) != 1:
            raise DecodeError(f"{value} is not in the order-{self.order} subgroup")
        return value


class Ed25519Group:
    """Prime-order subgroup of the edwards25519 curve.

    Points encode as the standard 32 bytes: little-endian y with the sign
    of x in the top bit.  Scalars are 32 bytes little-endian.
    """

    name = "ed25519"
    _p = 2**255 - 19
    order = 2**252 + 27742317777372353535851937790883648493
    scalar_bytes = 32
    element_bytes = 32
    security = "128-bit"

    _d = (-121665 * pow(121666, _p - 2, _p)) % _p
    _base_y = (4 * pow(5, _p - 2, _p)) % _p

    def __init__(self) -> None:
        x = self._recover_x(self._base_y, 0)
        self._base = (x, self._base_y)
        self._ident = (0, 1)

    def identity(self) -> bytes:
        return self._encode(self._ident)

    def base_pow(self, exponent: int) -> bytes:
        return self._encode(self._scalar_mul(self._base, exponent % self.order))

    def mul(self, a: bytes, b: bytes) -> bytes:
        return self._encode(self._add(self._decode(a), self._decode(b)))

    def pow(self, a: bytes, exponent: int) -> bytes:
        return self._encode(self._scalar_mul(self._decode(a), exponent % self.order))

    def inv(self, a: bytes) -> bytes:
        x, y = self._decode(a)
        return self._encode(((-x) % self._p, y))

    def is_valid(self, a: bytes) -> bool:
        try:
            self._decode(a)
        except DecodeError:
            return False
        return True

    # -- curve internals -------------------------------------------------

    def _add(self, p1, p2):
        x1, y1 = p1
        x2, y2 = p2
        m = self._p
        prod = self._d * x1 * x2 % m * y1 * y2 % m
        x3 = (x1 * y2 + x2 * y1) * pow(1 + prod, m - 2, m) % m
        y3 = (y1 * y2 + x1 * x2) * pow(1 - prod, m - 2, m) % m
        return (x3, y3)

    def _scalar_mul(self, point, k: int):
        result = self._ident
        addend = point
        while k:
            if k & 1:
                result = self._add(result, addend)
            addend = self._add(addend, addend)
            k >>= 1
        return result

    def _recover_x(self, y: int, sign: int) -> int:
        m = self._p
        yy = y * y % m
        u = (yy - 1) % m
        v = (self._d * yy + 1) % m
        # Candidate root of u/v per the standard decoding procedure.
        x = u * pow(v, 3, m) % m * pow(u * pow(v, 7, m) % m, (m - 5) // 8, m) % m
        if v * x * x % m == u:
            pass
        elif v * x * x % m == (-u) % m:
            x = x * pow(2, (m - 1) // 4, m) % m
        else:
            raise DecodeError("point is not on the curve")
        if x == 0 and sign == 1:
            raise DecodeError("invalid sign bit for x=0")
        if x & 1 != sign:
            x = m - x
        return x

    def _encode(self, point) -> bytes:
        x, y = point
        return (y | ((x & 1) << 255)).to_bytes(32, "little")

    def _decode(self, data: bytes):
        if len(data) != 32:
            raise DecodeError(f"ed25519 element must be 32 bytes, got {len(data)}")
        value = int.from_bytes(data, "little")
        sign = value >> 255
        y = value & ((1 << 255) - 1)
        if y >= self._p:
            raise DecodeError("y coordinate out of range")
        x = self._recover_x(y, sign)
        return (x, y)


TOY = ToyGroup()
ED25519 = Ed25519Group()

_BACKENDS = {"toy": TOY, "ed25519": ED25519}


def get_group(name: str):
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown group backend {name!r}") from None


def _as_rng(seed) -> random.Random:
    return seed if isinstance(seed, random.Random) else random.Random(seed)


def encode_scalar(group, value: int) -> bytes:
    return (value % group.order).to_bytes(group.scalar_bytes, "little")


def decode_scalar(group, data: bytes) -> int:
    if len(data) != group.scalar_bytes:
        raise DecodeError(f"scalar must be {group.scalar_bytes} bytes, got {len(data)}")
    value = int.from_bytes(data, "little")
    if value >= group.order:
        raise DecodeError("scalar not reduced")
    return value


def keygen(group, seed) -> KeyPair:
    """Derive a keypair from a seeded RNG; same seed gives the same pair."""
    secret = _as_rng(seed).randrange(group.order)
    return KeyPair(secret=secret, public=group.base_pow(secret))


def keypair_from_secret(group, secret: int) -> KeyPair:
    secret %= group.order
    return KeyPair(secret=secret, public=group.base_pow(secret))


def commit(group, seed) -> tuple[int, bytes]:
    """Pick a fresh signing nonce and return (nonce, commitment)."""
    nonce = _as_rng(seed).randrange(group.order)
    return nonce, group.base_pow(nonce)


def challenge(group, aggregate_commitment: bytes, message: bytes, *, override: int | None = None) -> int:
    """Hash the aggregate commitment and message down to a scalar.

    ``override`` substitutes a fixed scalar; only the toy backend accepts
    it, so hand-checked vectors can pin the challenge.
    """
    if override is not None:
        if group.name != "toy":
            raise ValueError("challenge override is a toy-group test hook")
        return override % group.order
    digest = hashlib.sha256(CHALLENGE_TAG + aggregate_commitment + message).digest()
    return int.from_bytes(digest, "little") % group.order


def respond(secret: int, nonce: int, challenge_scalar: int, order: int) -> int:
    return (nonce + challenge_scalar * secret) % order


def verify(group, public: bytes, commitment: bytes, challenge_scalar: int, response: int) -> bool:
    """Schnorr check: base^response == commitment * public^challenge."""
    if not (group.is_valid(public) and group.is_valid(commitment)):
        raise DecodeError("malformed group element")
    lhs = group.base_pow(response % group.order)
    rhs = group.mul(commitment, group.pow(public, challenge_scalar % group.order))
    return lhs == rhs


def aggregate(group, elements) -> bytes:
    """Product of group elements; identity for an empty sequence."""
    acc = group.identity()
    for element in elements:
        acc = group.mul(acc, element)
    return acc
