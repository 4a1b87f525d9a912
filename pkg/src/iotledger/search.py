"""Two-layer query engine run by the user.

First layer: the chain's time index plus a participant filter picks candidate
blocks. Second layer: an encrypted traversal of each block's indexed Merkle
tree finds the matching leaves, which are then proven against the signed root
and fetched from the cloud. When the cloud has lost or damaged a file, the
verified on-chain log stands in for it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .aspe import REL_TOL, AspeKey, Trapdoor, make_trapdoor
from .crypto import DecryptionError, derive, hash, sym_decrypt, verify
from .device_sim import CloudStore
from .geometry import DimensionError, HyperRect, anchors_for_rect
from .imt import MerkleProof, leaf_hash, prove, replay
from .ledger import Block, Chain, Registry, cloud_receipt_message, device_receipt_message, validate_block
from .records import CommFile, CommLog, RecordError

RECOVERED, CLOUD_LOST, TAMPERED = "recovered", "cloud_lost", "tampered"


class TamperError(Exception):
    def __init__(self, block_index: int, reason: str):
        self.block_index = block_index
        self.reason = reason
        super().__init__(f"block {block_index} failed validation: {reason}")


@dataclass(frozen=True)
class Query:
    time_range: tuple[int, int]
    rect: HyperRect
    participants: frozenset[bytes] | None = None

    def __post_init__(self):
        lo, hi = self.time_range
        if lo > hi:
            raise ValueError(f"empty time range {lo} > {hi}")
        if self.participants is not None:
            object.__setattr__(self, "participants", frozenset(self.participants))


@dataclass
class UserKeys:
    aspe: dict[bytes, AspeKey]
    sym: dict[bytes, bytes]


@dataclass
class Hit:
    block_index: int
    leaf_index: int
    leaf_id: bytes
    log: CommLog
    proof: MerkleProof
    status: str
    file: CommFile | None = None
    evidence: dict | None = None

    @property
    def file_digest(self) -> bytes | None:
        return self.evidence["file_digest"] if self.evidence else None


@dataclass
class QueryResult:
    hits: list[Hit] = field(default_factory=list)
    blocks: list[int] = field(default_factory=list)
    index_nodes_visited: int = 0
    tree_nodes_visited: int = 0

    def summary(self) -> dict:
        by_status: dict[str, int] = {}
        for h in self.hits:
            by_status[h.status] = by_status.get(h.status, 0) + 1
        return {
            "hits": len(self.hits),
            "status": by_status,
            "blocks_searched": len(self.blocks),
            "index_nodes_visited": self.index_nodes_visited,
            "tree_nodes_visited": self.tree_nodes_visited,
            "proof_lengths": [len(h.proof.path) for h in self.hits],
        }


def locate_blocks(chain: Chain, q: Query) -> tuple[list[int], int]:
    refs, visited = chain.time_index.locate(*q.time_range)
    if q.participants is not None:
        refs = [i for i in refs if chain.blocks[i].body.signers() & q.participants]
    return refs, visited


def search_block(tr: Trapdoor, block: Block) -> tuple[np.ndarray, int]:
    """Matching leaf node indices of the block's index, and nodes visited."""
    imt = block.body.imt
    if imt is None:
        return np.empty(0, dtype=np.int64), 0
    if tr.dim != imt.dim:
        raise DimensionError(f"trapdoor dimension {tr.dim} != index dimension {imt.dim}")
    return kernels.search_tree(tr.w, tr.u, imt.enc_lo, imt.enc_hi, imt.left, imt.right, REL_TOL)


def _evidence(block: Block, log: CommLog, cipher_ref: bytes, file_digest: bytes | None,
              registry: Registry | None) -> dict:
    body = block.body
    ev = {
        "file_digest": file_digest,
        "cipher_ref": cipher_ref,
        "device_id": body.device_id,
        "peer_id": log.peer_id,
        "flush_ts": body.flush_ts,
        "sig_c": body.sig_c,
        "sig_d": body.sig_d,
        "peer_sig": log.peer_sig,
    }
    if registry is not None:
        ev["verified"] = {
            "sig_c": verify(registry.cloud, cloud_receipt_message(body), body.sig_c),
            "sig_d": verify(registry.key(body.device_id), device_receipt_message(body), body.sig_d),
            "peer_sig": verify(registry.key(log.peer_id), log.signed_message(), log.peer_sig),
        }
    return ev


def verify_and_fetch(hits, chain: Chain, cloud: CloudStore, keys: UserKeys,
                     registry: Registry | None = None) -> list[Hit]:
    """Prove each ``(block_index, leaf_index)`` hit and recover its file."""
    out = []
    root_ok: dict[tuple[int, bytes], bool] = {}
    for bi, leaf in hits:
        block = chain.blocks[bi]
        body = block.body
        imt = body.imt
        log = body.logs[int(imt.log_ref[leaf])]
        cipher_ref = imt.cipher_ref[leaf]
        proof = prove(imt, int(leaf))
        fresh_leaf = leaf_hash(imt.lo_raw[leaf], imt.hi_raw[leaf], log.to_bytes())
        root = replay(proof)
        proven = fresh_leaf == proof.leaf_hash and root is not None
        if proven and registry is not None:
            # one signature check per block and recomputed root
            if (bi, root) not in root_ok:
                root_ok[bi, root] = verify(registry.key(body.device_id), root, block.header.imt_root_sig)
            proven = root_ok[bi, root]
        sym_key = keys.sym.get(body.device_id)
        try:
            file_digest = sym_decrypt(sym_key, log.enc_file_hash) if sym_key else None
        except DecryptionError:
            file_digest = None
        hit = Hit(bi, int(leaf), imt.ids[leaf], log, proof, TAMPERED)
        if not proven or file_digest is None:
            hit.evidence = _evidence(block, log, cipher_ref, file_digest, registry)
            out.append(hit)
            continue
        got = cloud.get(cipher_ref)
        plain = None
        if got.status == "ok":
            try:
                plain = sym_decrypt(sym_key, got.data)
            except DecryptionError:
                plain = None
        if plain is not None and hash(plain) == file_digest:
            try:
                hit.file = CommFile.from_bytes(plain)
                hit.status = RECOVERED
            except RecordError:
                plain = None
        if hit.status != RECOVERED:
            hit.status = CLOUD_LOST
        # Signatures only matter as evidence when the file itself is gone.
        hit.evidence = _evidence(block, log, cipher_ref, file_digest, registry if hit.status == CLOUD_LOST else None)
        out.append(hit)
    return out


def trapdoor_seed(seed: int, device_id: bytes) -> int:
    return int.from_bytes(derive(b"trapdoor", seed.to_bytes(8, "big"), device_id, size=8), "big")


def end_to_end_query(q: Query, chain: Chain, cloud: CloudStore, keys: UserKeys, registry: Registry,
                     seed: int = 0, delta: float = 0.5, validate: bool = True) -> QueryResult:
    """Full pipeline; raises ``TamperError`` if a candidate block fails validation."""
    anchors = anchors_for_rect(q.rect, delta)
    refs, ti_visited = locate_blocks(chain, q)
    result = QueryResult(blocks=refs, index_nodes_visited=ti_visited)
    trapdoors: dict[bytes, Trapdoor] = {}
    raw_hits = []
    lo, hi = q.time_range
    for bi in refs:
        block = chain.blocks[bi]
        if validate:
            v = validate_block(block, chain.blocks[bi - 1], registry)
            if not v:
                raise TamperError(bi, v.reason)
        dev = block.body.device_id
        if dev not in keys.aspe:
            continue
        if dev not in trapdoors:
            trapdoors[dev] = make_trapdoor(keys.aspe[dev], anchors, trapdoor_seed(seed, dev))
        leaves, visited = search_block(trapdoors[dev], block)
        result.tree_nodes_visited += visited
        imt = block.body.imt
        for leaf in leaves:
            log = block.body.logs[int(imt.log_ref[leaf])]
            if not lo <= log.ts <= hi:
                continue
            if q.participants is not None and not ({dev, log.peer_id} & q.participants):
                continue
            raw_hits.append((bi, int(leaf)))
    hits = verify_and_fetch(raw_hits, chain, cloud, keys, registry)
    hits.sort(key=lambda h: (h.block_index, h.leaf_id))
    result.hits = hits
    return result
