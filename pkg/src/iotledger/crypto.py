"""Hashing, signatures and authenticated symmetric encryption.

Pinned schemes: SHA-256 digests, Ed25519 signatures (64-byte, deterministic)
and ChaCha20-Poly1305 with a 12-byte nonce prepended to the ciphertext.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

DIGEST_SIZE = 32
SIG_SIZE = 64
ID_SIZE = 16
SYM_KEY_SIZE = 32
NONCE_SIZE = 12
TAG_SIZE = 16


class DecryptionError(Exception):
    """Authenticated decryption failed: wrong key or modified ciphertext."""


def hash(msg: bytes) -> bytes:  # noqa: A001
    return hashlib.sha256(msg).digest()


def derive(label: bytes, *parts: bytes, size: int = DIGEST_SIZE) -> bytes:
    """Deterministic key/identifier derivation from a label and byte parts."""
    h = hashlib.sha256(label)
    for p in parts:
        h.update(len(p).to_bytes(4, "big"))
        h.update(p)
    out = h.digest()
    while len(out) < size:
        out += hashlib.sha256(out).digest()
    return out[:size]


@dataclass(frozen=True)
class KeyPair:
    secret: Ed25519PrivateKey
    public: Ed25519PublicKey
    owner_id: bytes

    @classmethod
    def from_seed(cls, seed: bytes, owner_id: bytes) -> KeyPair:
        sk = Ed25519PrivateKey.from_private_bytes(derive(b"ed25519", seed))
        return cls(sk, sk.public_key(), owner_id)

    @classmethod
    def generate(cls, owner_id: bytes) -> KeyPair:
        sk = Ed25519PrivateKey.generate()
        return cls(sk, sk.public_key(), owner_id)

    def public_bytes(self) -> bytes:
        return public_key_bytes(self.public)


@dataclass(frozen=True)
class Signature:
    bytes: bytes
    signer_id: bytes


def public_key_bytes(pub: Ed25519PublicKey) -> bytes:
    return pub.public_bytes(Encoding.Raw, PublicFormat.Raw)


def public_key_from_bytes(raw: bytes) -> Ed25519PublicKey:
    return Ed25519PublicKey.from_public_bytes(raw)


def sign(kp: KeyPair, msg: bytes) -> Signature:
    return Signature(kp.secret.sign(msg), kp.owner_id)


def verify(pub: Ed25519PublicKey | None, msg: bytes, sig) -> bool:
    raw = sig.bytes if isinstance(sig, Signature) else sig
    if pub is None or not isinstance(raw, (bytes, bytearray)) or len(raw) != SIG_SIZE:
        return False
    try:
        pub.verify(bytes(raw), msg)
    except (InvalidSignature, ValueError):
        return False
    return True


def sym_encrypt(key: bytes, plaintext: bytes, nonce: bytes | None = None) -> bytes:
    if nonce is None:
        nonce = os.urandom(NONCE_SIZE)
    if len(nonce) != NONCE_SIZE:
        raise ValueError(f"nonce must be {NONCE_SIZE} bytes")
    return nonce + ChaCha20Poly1305(key).encrypt(nonce, plaintext, None)


def sym_decrypt(key: bytes, ciphertext: bytes) -> bytes:
    if len(ciphertext) < NONCE_SIZE + TAG_SIZE:
        raise DecryptionError("ciphertext too short")
    try:
        return ChaCha20Poly1305(key).decrypt(ciphertext[:NONCE_SIZE], ciphertext[NONCE_SIZE:], None)
    except InvalidTag as exc:
        raise DecryptionError("authentication tag mismatch") from exc


def sym_ciphertext_size(plain_len: int) -> int:
    return NONCE_SIZE + plain_len + TAG_SIZE
