"""Blocks, proof-of-work, validation, majority approval and the time index."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

from . import kernels
from .crypto import DIGEST_SIZE, ID_SIZE, SIG_SIZE, hash, verify
from .imt import ImtTree, compute_hashes
from .kdtree import FormatError, gen_ids, structure_errors
from .records import CommLog, RecordError, receipt_message

MAX_DIFFICULTY = 32
ZERO_HASH = bytes(DIGEST_SIZE)

_HEADER = struct.Struct(f">{DIGEST_SIZE}s{SIG_SIZE}sBQQ")
HEADER_SIZE = _HEADER.size
_BODY_HEAD = struct.Struct(f">{ID_SIZE}sQII")


class LedgerError(ValueError):
    pass


@dataclass(frozen=True)
class BlockHeader:
    prev_hash: bytes
    imt_root_sig: bytes
    difficulty: int
    timestamp: int
    nonce: int

    def pow_prefix(self) -> bytes:
        return self.to_bytes()[:-8]

    def to_bytes(self) -> bytes:
        return _HEADER.pack(self.prev_hash, self.imt_root_sig, self.difficulty, self.timestamp, self.nonce)

    @classmethod
    def from_bytes(cls, buf: bytes) -> BlockHeader:
        if len(buf) != HEADER_SIZE:
            raise FormatError("bad header length")
        return cls(*_HEADER.unpack(buf))

    def digest(self) -> bytes:
        return hash(self.to_bytes())


@dataclass(frozen=True, eq=False)
class BlockBody:
    device_id: bytes
    flush_ts: int
    dim: int
    logs: tuple[CommLog, ...]
    sig_c: bytes
    sig_d: bytes
    imt_bytes: bytes

    def logs_bytes(self) -> bytes:
        return b"".join(log.to_bytes() for log in self.logs)

    def to_bytes(self) -> bytes:
        return b"".join([
            _BODY_HEAD.pack(self.device_id, self.flush_ts, self.dim, len(self.logs)),
            self.logs_bytes(),
            self.sig_c,
            self.sig_d,
            struct.pack(">I", len(self.imt_bytes)),
            self.imt_bytes,
        ])

    @classmethod
    def from_bytes(cls, buf: bytes) -> BlockBody:
        if len(buf) < _BODY_HEAD.size:
            raise FormatError("truncated body")
        device_id, flush_ts, dim, m = _BODY_HEAD.unpack_from(buf)
        pos = _BODY_HEAD.size
        need = pos + m * CommLog.SIZE + 2 * SIG_SIZE + 4
        if need > len(buf):
            raise FormatError("truncated body")
        try:
            logs = tuple(CommLog.from_bytes(buf[pos + k * CommLog.SIZE: pos + (k + 1) * CommLog.SIZE])
                         for k in range(m))
        except RecordError as exc:
            raise FormatError(str(exc)) from exc
        pos += m * CommLog.SIZE
        sig_c = buf[pos:pos + SIG_SIZE]
        sig_d = buf[pos + SIG_SIZE:pos + 2 * SIG_SIZE]
        pos += 2 * SIG_SIZE
        (ilen,) = struct.unpack_from(">I", buf, pos)
        pos += 4
        if pos + ilen != len(buf):
            raise FormatError("body length mismatch")
        return cls(device_id, flush_ts, dim, logs, sig_c, sig_d, buf[pos:])

    @cached_property
    def imt(self) -> ImtTree | None:
        if not self.imt_bytes:
            return None
        return ImtTree.from_bytes(self.imt_bytes, self.dim)

    def cipher_refs(self) -> list[bytes]:
        """Leaf content addresses in log order."""
        t = self.imt
        refs = [None] * len(self.logs)
        for i in t.leaves():
            refs[int(t.log_ref[i])] = t.cipher_ref[i]
        return refs

    def signers(self) -> set[bytes]:
        return {self.device_id, *(log.peer_id for log in self.logs)}


@dataclass(frozen=True, eq=False)
class Block:
    header: BlockHeader
    body: BlockBody

    def to_bytes(self) -> bytes:
        return self.header.to_bytes() + self.body.to_bytes()

    @classmethod
    def from_bytes(cls, buf: bytes) -> Block:
        return cls(BlockHeader.from_bytes(buf[:HEADER_SIZE]), BlockBody.from_bytes(buf[HEADER_SIZE:]))

    def digest(self) -> bytes:
        return self.header.digest()

    @property
    def is_genesis(self) -> bool:
        return self.header.prev_hash == ZERO_HASH and not self.body.logs


def genesis_block() -> Block:
    body = BlockBody(bytes(ID_SIZE), 0, 0, (), bytes(SIG_SIZE), bytes(SIG_SIZE), b"")
    return Block(BlockHeader(ZERO_HASH, bytes(SIG_SIZE), 0, 0, 0), body)


# -- messages signed around a block -------------------------------------------------

def device_receipt_message(body: BlockBody) -> bytes:
    return hash(body.logs_bytes() + body.sig_c)


def cloud_receipt_message(body: BlockBody) -> bytes:
    return receipt_message(body.cipher_refs(), body.device_id, body.flush_ts)


@dataclass(frozen=True)
class Payload:
    """What a device broadcasts after a flush: block body plus signed IMT root."""

    body: BlockBody
    imt_root_sig: bytes


# -- mining ---------------------------------------------------------------------------

def mine(payload: Payload, prev_hash: bytes, difficulty: int, miner_id: bytes | None = None,
         timestamp: int | None = None) -> BlockHeader:
    """Scan nonces from zero; the first header meeting ``difficulty`` wins.

    ``miner_id`` only labels who did the work; it does not enter the header.
    The header timestamp defaults to the body's flush time.
    """
    if not 0 <= difficulty <= MAX_DIFFICULTY:
        raise LedgerError(f"difficulty {difficulty} outside [0, {MAX_DIFFICULTY}]")
    ts = payload.body.flush_ts if timestamp is None else timestamp
    draft = BlockHeader(prev_hash, payload.imt_root_sig, difficulty, ts, 0)
    nonce = kernels.pow_search(draft.pow_prefix(), difficulty)
    if nonce == kernels.NO_NONCE:
        raise LedgerError("nonce space exhausted")
    return BlockHeader(prev_hash, payload.imt_root_sig, difficulty, ts, nonce)


def meets_target(header: BlockHeader) -> bool:
    return kernels.leading_zero_bits(header.digest()) >= header.difficulty


# -- validation -------------------------------------------------------------------

@dataclass
class Registry:
    """Public keys known to every participant plus the network difficulty."""

    devices: dict
    cloud: object
    difficulty: int

    def key(self, device_id: bytes):
        return self.devices.get(device_id)


@dataclass(frozen=True)
class Verdict:
    ok: bool
    reason: str = "ok"

    def __bool__(self):
        return self.ok

    def __iter__(self):
        return iter((self.ok, self.reason))


def validate_block(b: Block, prev: Block | bytes, registry: Registry) -> Verdict:
    """Check one block against its predecessor (block or header digest).

    Reasons, in check order: prev-hash, difficulty, timestamp, pow, malformed,
    unknown-device, imt-structure, imt-root, imt-hash, cloud-receipt,
    device-receipt, log-signature.
    """
    h = b.header
    body = b.body
    if isinstance(prev, Block):
        prev_digest, prev_ts = prev.digest(), prev.header.timestamp
    else:
        prev_digest, prev_ts = prev, 0
    if h.prev_hash != prev_digest:
        return Verdict(False, "prev-hash")
    if h.difficulty != registry.difficulty:
        return Verdict(False, "difficulty")
    if h.timestamp < prev_ts or h.timestamp != body.flush_ts:
        return Verdict(False, "timestamp")
    # The nonce must be the lowest one meeting the target, so it is canonical.
    lowest = kernels.pow_search(h.pow_prefix(), h.difficulty, 0, h.nonce + 1)
    if lowest != h.nonce:
        return Verdict(False, "pow")
    if not body.logs:
        return Verdict(False, "malformed")
    try:
        tree = body.imt
    except FormatError:
        return Verdict(False, "malformed")
    if tree is None:
        return Verdict(False, "malformed")
    device_key = registry.key(body.device_id)
    if device_key is None:
        return Verdict(False, "unknown-device")

    m = len(body.logs)
    leaves = tree.leaves()
    if (len(leaves) != m or sorted(int(tree.log_ref[i]) for i in leaves) != list(range(m))
            or structure_errors(tree)
            or tree.ids != gen_ids(tree_id_seed(body.device_id, body.flush_ts), len(tree))):
        return Verdict(False, "imt-structure")
    hashes = compute_hashes(tree, tree.lo_raw, tree.hi_raw, body.logs)
    if not verify(device_key, hashes[0], h.imt_root_sig):
        return Verdict(False, "imt-root")
    if hashes != tree.hashes:
        return Verdict(False, "imt-hash")
    if not verify(registry.cloud, cloud_receipt_message(body), body.sig_c):
        return Verdict(False, "cloud-receipt")
    if not verify(device_key, device_receipt_message(body), body.sig_d):
        return Verdict(False, "device-receipt")
    for log in body.logs:
        if log.peer_id == body.device_id or not verify(registry.key(log.peer_id), log.signed_message(), log.peer_sig):
            return Verdict(False, "log-signature")
    return Verdict(True)


def tree_id_seed(device_id: bytes, flush_ts: int) -> bytes:
    """Seed of the node-id generator; both inputs are covered by the cloud receipt."""
    return device_id + struct.pack(">Q", flush_ts)


# -- time index -------------------------------------------------------------------

@dataclass
class _TiNode:
    lo: int
    hi: int
    first: int                     # g: lowest block position covered
    last: int                      # h: highest block position covered
    left: _TiNode | None = None
    right: _TiNode | None = None
    block_ref: int | None = None   # set on leaves


class TimeIndex:
    """Right-spine index over blocks: the newest block sits one edge below the root."""

    def __init__(self):
        self.root: _TiNode | None = None
        self.count = 0
        self.last_ts: int | None = None

    def insert(self, block_ref: int, ts: int, ts_lo: int | None = None) -> TimeIndex:
        """Add a block sealed at ``ts`` whose contents start at ``ts_lo``."""
        if self.last_ts is not None and ts < self.last_ts:
            raise LedgerError(f"out-of-order timestamp {ts} < {self.last_ts}")
        lo = ts if ts_lo is None else min(ts_lo, ts)
        pos = self.count + 1
        leaf = _TiNode(lo, ts, pos, pos, block_ref=block_ref)
        if self.root is None:
            self.root = leaf
        else:
            old = self.root
            self.root = _TiNode(min(old.lo, lo), max(old.hi, ts), old.first, pos, old, leaf)
        self.count += 1
        self.last_ts = ts
        return self

    def locate(self, ts_lo: int, ts_hi: int) -> tuple[list[int], int]:
        """Blocks whose time range meets ``[ts_lo, ts_hi]``, and nodes visited.

        Child ranges are read from the parent, so a pruned child costs no visit.
        """
        if self.root is None:
            return [], 0
        found = []
        visited = 1
        if not (self.root.lo <= ts_hi and ts_lo <= self.root.hi):
            return [], visited
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.block_ref is not None:
                found.append(node.block_ref)
                continue
            for child in (node.left, node.right):
                if child.lo <= ts_hi and ts_lo <= child.hi:
                    visited += 1
                    stack.append(child)
        return sorted(found), visited

    def depth_of(self, block_ref: int) -> int:
        stack = [(self.root, 0)] if self.root else []
        while stack:
            node, d = stack.pop()
            if node.block_ref == block_ref:
                return d
            if node.block_ref is None:
                stack += [(node.left, d + 1), (node.right, d + 1)]
        raise KeyError(block_ref)


# -- chain -----------------------------------------------------------------------

@dataclass
class Chain:
    blocks: list[Block] = field(default_factory=lambda: [genesis_block()])
    time_index: TimeIndex = field(default_factory=TimeIndex)

    def __post_init__(self):
        if not self.time_index.count:
            for i, b in enumerate(self.blocks[1:], start=1):
                self._index(i, b)

    def _index(self, i: int, b: Block):
        first = min((log.ts for log in b.body.logs), default=b.header.timestamp)
        self.time_index.insert(i, b.header.timestamp, first)

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    def __len__(self):
        return len(self.blocks)

    def append(self, b: Block):
        if b.header.prev_hash != self.tip.digest():
            raise LedgerError("block does not extend the tip")
        self.blocks.append(b)
        self._index(len(self.blocks) - 1, b)

    def to_bytes(self) -> bytes:
        return b"".join(struct.pack(">I", len(raw)) + raw for raw in (b.to_bytes() for b in self.blocks))

    @classmethod
    def from_bytes(cls, buf: bytes) -> Chain:
        blocks = []
        pos = 0
        while pos < len(buf):
            if pos + 4 > len(buf):
                raise FormatError("truncated length prefix")
            (n,) = struct.unpack_from(">I", buf, pos)
            pos += 4
            if pos + n > len(buf):
                raise FormatError("truncated block")
            blocks.append(Block.from_bytes(buf[pos:pos + n]))
            pos += n
        if not blocks or not blocks[0].is_genesis or blocks[0].to_bytes() != genesis_block().to_bytes():
            raise FormatError("chain must start with the genesis block")
        return cls(blocks)

    def export(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> Chain:
        return cls.from_bytes(Path(path).read_bytes())


def validate_chain(blocks: Sequence[Block], registry: Registry, anchor: Block | bytes | None = None) -> Verdict:
    """Validate a run of blocks. Without ``anchor`` the first must be genesis.

    A device keeping only a suffix passes the digest of the block before it.
    """
    start = 0
    prev = anchor
    if anchor is None:
        if not blocks or blocks[0].to_bytes() != genesis_block().to_bytes():
            return Verdict(False, "genesis")
        prev, start = blocks[0], 1
    for i in range(start, len(blocks)):
        v = validate_block(blocks[i], prev, registry)
        if not v:
            return Verdict(False, f"block {i}: {v.reason}")
        prev = blocks[i]
    return Verdict(True)


def approve_and_append(chain: Chain, block: Block, validators: Iterable, verdicts: Sequence[bool] | None = None) -> bool:
    """Append iff strictly more than half of the validators accept.

    Each validator exposes ``validate_block(block, prev) -> Verdict``;
    ``verdicts`` overrides their answers (fault injection).
    """
    validators = list(validators)
    if verdicts is None:
        verdicts = [bool(v.validate_block(block, chain.tip)) for v in validators]
    elif len(verdicts) != len(validators):
        raise LedgerError("one verdict per validator")
    if 2 * sum(bool(x) for x in verdicts) <= len(validators):
        return False
    chain.append(block)
    return True
