"""Canonical encoding, digests and deterministic Ed25519 signing keys.

Every signed or hashed object goes through :func:`canonical` so the byte
stream is reproducible across runs and implementations. The encoding is
type-tagged and length-prefixed; mappings are emitted in sorted-key order
and sequences in their given order.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

SIGNATURE_SCHEME = "ed25519"
DIGEST_NAME = "sha256"
SIGNATURE_LEN = 64
ZERO_HASH = "00" * 32


class SignatureFormatError(ValueError):
    """Signature bytes are not a well-formed Ed25519 signature."""


def _frame(tag: bytes, body: bytes) -> bytes:
    return tag + struct.pack(">I", len(body)) + body


def canonical(obj) -> bytes:
    if obj is None:
        return b"N"
    if obj is True:
        return b"T"
    if obj is False:
        return b"F"
    if isinstance(obj, int):
        return _frame(b"I", str(obj).encode())
    if isinstance(obj, float):
        return b"D" + struct.pack(">d", obj)
    if isinstance(obj, str):
        return _frame(b"S", obj.encode("utf-8"))
    if isinstance(obj, (bytes, bytearray)):
        return _frame(b"B", bytes(obj))
    if isinstance(obj, (list, tuple)):
        return _frame(b"L", b"".join(canonical(x) for x in obj))
    if isinstance(obj, dict):
        parts = []
        for key in sorted(obj):
            if not isinstance(key, str):
                raise TypeError(f"mapping keys must be str, got {type(key).__name__}")
            parts.append(canonical(key) + canonical(obj[key]))
        return _frame(b"M", b"".join(parts))
    raise TypeError(f"cannot canonically encode {type(obj).__name__}")


def digest(obj) -> str:
    """Hex sha256 of the canonical encoding."""
    return hashlib.sha256(canonical(obj)).hexdigest()


def digest_bytes(*parts: bytes) -> bytes:
    h = hashlib.sha256()
    for part in parts:
        h.update(struct.pack(">I", len(part)))
        h.update(part)
    return h.digest()


@dataclass(frozen=True)
class KeyPair:
    """An Ed25519 identity. ``key`` (hex public key) is the opaque identity."""

    name: str
    private: Ed25519PrivateKey
    key: str

    @classmethod
    def derive(cls, seed: int | str, name: str) -> "KeyPair":
        raw = digest_bytes(b"witnessnet-key", str(seed).encode(), name.encode())
        private = Ed25519PrivateKey.from_private_bytes(raw)
        public = private.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        return cls(name, private, public.hex())

    def sign(self, obj) -> str:
        return self.private.sign(canonical(obj)).hex()


_PUBLIC_CACHE: dict[str, Ed25519PublicKey] = {}


def _public(key: str) -> Ed25519PublicKey:
    pub = _PUBLIC_CACHE.get(key)
    if pub is None:
        try:
            pub = Ed25519PublicKey.from_public_bytes(bytes.fromhex(key))
        except ValueError as exc:
            raise SignatureFormatError(f"malformed public key {key[:16]}...") from exc
        _PUBLIC_CACHE[key] = pub
    return pub


def verify(key: str, obj, signature: str) -> bool:
    """True iff ``signature`` is ``key``'s signature over ``obj``.

    Raises :class:`SignatureFormatError` if the signature or key cannot be
    parsed at all; a well-formed but wrong signature returns False.
    """
    try:
        sig = bytes.fromhex(signature)
    except (TypeError, ValueError) as exc:
        raise SignatureFormatError("signature is not hex") from exc
    if len(sig) != SIGNATURE_LEN:
        raise SignatureFormatError(f"signature must be {SIGNATURE_LEN} bytes, got {len(sig)}")
    try:
        _public(key).verify(sig, canonical(obj))
    except InvalidSignature:
        return False
    return True
