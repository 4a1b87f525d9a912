"""Indexed Merkle tree: Merkle hashes laid over the encrypted kd-tree.

leaf:      h([V_lo] || [V_hi] || h(log))
internal:  h(h_left || h_right || [V_lo] || [V_hi])

where ``[V]`` is the fixed-width encoding of an encrypted vertex.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .crypto import DIGEST_SIZE, hash
from .kdtree import EncKdTree, FormatError, _serialize, parse_tree, vertex_bytes

SIDE_LEFT, SIDE_RIGHT = 0, 1


class ImtError(ValueError):
    pass


def _log_bytes(log) -> bytes:
    return log if isinstance(log, (bytes, bytearray)) else log.to_bytes()


def leaf_hash(lo_b: bytes, hi_b: bytes, log_b: bytes) -> bytes:
    return hash(lo_b + hi_b + hash(log_b))


def node_hash(h_left: bytes, h_right: bytes, lo_b: bytes, hi_b: bytes) -> bytes:
    return hash(h_left + h_right + lo_b + hi_b)


@dataclass(eq=False)
class ImtTree(EncKdTree):
    hashes: list[bytes] = None
    lo_raw: list[bytes] = None
    hi_raw: list[bytes] = None

    @property
    def root_hash(self) -> bytes:
        return self.hashes[0]

    def to_bytes(self) -> bytes:
        return _serialize(self, self.enc_lo, self.enc_hi, self.hashes)

    def index_of(self, node_id: bytes) -> int:
        if not hasattr(self, "_id_index"):
            self._id_index = {nid: i for i, nid in enumerate(self.ids)}
        try:
            return self._id_index[node_id]
        except KeyError:
            raise ImtError(f"unknown node id {node_id.hex()}") from None

    @classmethod
    def from_bytes(cls, buf: bytes, dim: int) -> ImtTree:
        f = parse_tree(buf, dim, encrypted=True, with_hash=True)
        return cls(dim, f["lo"], f["hi"], f["size"], f["left"], f["right"], f["ids"],
                   f["cipher_ref"], f["log_ref"], f["hashes"], f["lo_raw"], f["hi_raw"])


def compute_hashes(tree, lo_raw, hi_raw, logs) -> list[bytes]:
    """Bottom-up hashes; children always follow their parent in pre-order."""
    n = len(tree)
    out: list[bytes] = [b""] * n
    for i in range(n - 1, -1, -1):
        if tree.left[i] < 0:
            ref = int(tree.log_ref[i])
            if not 0 <= ref < len(logs):
                raise ImtError(f"leaf {i} points at missing log {ref}")
            out[i] = leaf_hash(lo_raw[i], hi_raw[i], _log_bytes(logs[ref]))
        else:
            out[i] = node_hash(out[tree.left[i]], out[tree.right[i]], lo_raw[i], hi_raw[i])
    return out


def build_imt(t: EncKdTree, logs) -> ImtTree:
    lo_raw, hi_raw = vertex_bytes(t.enc_lo), vertex_bytes(t.enc_hi)
    hashes = compute_hashes(t, lo_raw, hi_raw, logs)
    return ImtTree(t.dim, t.enc_lo, t.enc_hi, t.size, t.left, t.right, t.ids, t.cipher_ref,
                   t.log_ref, hashes, lo_raw, hi_raw)


@dataclass(frozen=True)
class ProofStep:
    sibling_hash: bytes
    sibling_side: int
    parent_lo: bytes
    parent_hi: bytes


@dataclass(frozen=True)
class MerkleProof:
    leaf_hash: bytes
    path: tuple[ProofStep, ...]

    def to_bytes(self) -> bytes:
        parts = [self.leaf_hash, struct.pack(">I", len(self.path))]
        for s in self.path:
            parts += [s.sibling_hash, bytes([s.sibling_side]), struct.pack(">I", len(s.parent_lo)),
                      s.parent_lo, s.parent_hi]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes) -> MerkleProof:
        try:
            leaf = buf[:DIGEST_SIZE]
            (count,) = struct.unpack_from(">I", buf, DIGEST_SIZE)
            pos = DIGEST_SIZE + 4
            steps = []
            for _ in range(count):
                sib = buf[pos:pos + DIGEST_SIZE]
                side = buf[pos + DIGEST_SIZE]
                (w,) = struct.unpack_from(">I", buf, pos + DIGEST_SIZE + 1)
                pos += DIGEST_SIZE + 5
                steps.append(ProofStep(sib, side, buf[pos:pos + w], buf[pos + w:pos + 2 * w]))
                pos += 2 * w
        except (struct.error, IndexError) as exc:
            raise FormatError("malformed proof") from exc
        if pos != len(buf) or len(leaf) != DIGEST_SIZE:
            raise FormatError("malformed proof")
        return cls(leaf, tuple(steps))


def _parents(tree) -> np.ndarray:
    parent = np.full(len(tree), -1, dtype=np.int64)
    inner = np.flatnonzero(tree.left >= 0)
    parent[tree.left[inner]] = inner
    parent[tree.right[inner]] = inner
    return parent


def prove(imt: ImtTree, leaf_id) -> MerkleProof:
    """Authentication path for a leaf given by node id (bytes) or node index."""
    i = imt.index_of(leaf_id) if isinstance(leaf_id, (bytes, bytearray)) else int(leaf_id)
    if not 0 <= i < len(imt) or imt.left[i] >= 0:
        raise ImtError(f"node {leaf_id!r} is not a leaf")
    if not hasattr(imt, "_parent"):
        imt._parent = _parents(imt)
    steps = []
    node = i
    while imt._parent[node] >= 0:
        p = int(imt._parent[node])
        if imt.left[p] == node:
            sib, side = int(imt.right[p]), SIDE_RIGHT
        else:
            sib, side = int(imt.left[p]), SIDE_LEFT
        steps.append(ProofStep(imt.hashes[sib], side, imt.lo_raw[p], imt.hi_raw[p]))
        node = p
    return MerkleProof(imt.hashes[i], tuple(steps))


def replay(proof: MerkleProof) -> bytes | None:
    h = proof.leaf_hash
    if not isinstance(h, bytes) or len(h) != DIGEST_SIZE:
        return None
    for s in proof.path:
        if len(s.sibling_hash) != DIGEST_SIZE or s.sibling_side not in (SIDE_LEFT, SIDE_RIGHT):
            return None
        if s.sibling_side == SIDE_RIGHT:
            h = node_hash(h, s.sibling_hash, s.parent_lo, s.parent_hi)
        else:
            h = node_hash(s.sibling_hash, h, s.parent_lo, s.parent_hi)
    return h


def verify(root_hash: bytes, proof: MerkleProof) -> bool:
    try:
        return replay(proof) == root_hash
    except (TypeError, AttributeError):
        return False
