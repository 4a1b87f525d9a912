"""Wire records shared by devices, blocks and the query side."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .crypto import DIGEST_SIZE, ID_SIZE, SIG_SIZE, sym_ciphertext_size

ENC_DIGEST_SIZE = sym_ciphertext_size(DIGEST_SIZE)


class RecordError(ValueError):
    pass


@dataclass(frozen=True)
class CommFile:
    sender_id: bytes
    receiver_id: bytes
    ts: int
    attrs: tuple[float, ...]
    body: bytes

    def __post_init__(self):
        if self.sender_id == self.receiver_id:
            raise RecordError("sender and receiver must differ")

    def peer_of(self, device_id: bytes) -> bytes:
        return self.receiver_id if device_id == self.sender_id else self.sender_id

    def to_bytes(self) -> bytes:
        return b"".join([
            self.sender_id,
            self.receiver_id,
            struct.pack(">QI", self.ts, len(self.attrs)),
            np.asarray(self.attrs, dtype=">f8").tobytes(),
            struct.pack(">I", len(self.body)),
            self.body,
        ])

    @classmethod
    def from_bytes(cls, buf: bytes) -> CommFile:
        try:
            s, r = buf[:ID_SIZE], buf[ID_SIZE:2 * ID_SIZE]
            ts, l = struct.unpack_from(">QI", buf, 2 * ID_SIZE)
            pos = 2 * ID_SIZE + 12
            attrs = tuple(np.frombuffer(buf[pos:pos + 8 * l], dtype=">f8").tolist())
            pos += 8 * l
            (blen,) = struct.unpack_from(">I", buf, pos)
            body = buf[pos + 4:pos + 4 + blen]
        except (struct.error, ValueError) as exc:
            raise RecordError("malformed file record") from exc
        if len(attrs) != l or len(body) != blen or pos + 4 + blen != len(buf):
            raise RecordError("malformed file record")
        return cls(s, r, ts, attrs, body)


@dataclass(frozen=True)
class CommLog:
    """On-chain digest of one file: ``E(h(F))``, the peer and its signature."""

    enc_file_hash: bytes
    peer_id: bytes
    ts: int
    peer_sig: bytes

    SIZE = ENC_DIGEST_SIZE + ID_SIZE + 8 + SIG_SIZE

    def signed_message(self) -> bytes:
        return peer_message(self.enc_file_hash, self.ts)

    def to_bytes(self) -> bytes:
        return self.enc_file_hash + self.peer_id + struct.pack(">Q", self.ts) + self.peer_sig

    @classmethod
    def from_bytes(cls, buf: bytes) -> CommLog:
        if len(buf) != cls.SIZE:
            raise RecordError(f"log record must be {cls.SIZE} bytes")
        a = ENC_DIGEST_SIZE
        b = a + ID_SIZE
        (ts,) = struct.unpack_from(">Q", buf, b)
        return cls(buf[:a], buf[a:b], ts, buf[b + 8:])


def peer_message(enc_file_hash: bytes, ts: int) -> bytes:
    return enc_file_hash + struct.pack(">Q", ts)


def receipt_message(digests, party_id: bytes, ts: int) -> bytes:
    """``h_1 || ... || h_m || ID || TS`` as signed by cloud and device."""
    return b"".join(digests) + party_id + struct.pack(">Q", ts)
