"""Discrete-event simulation of the IoT network and its cloud.

Devices exchange files, buffer them up to a storage cap, and on overflow
outsource the ciphertexts to the cloud, collect peer signatures on the log
digests, build their encrypted index and broadcast the result. Each round at
most one pending broadcast is mined into a block and put to a majority vote.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .aspe import AspeKey, keygen
from .config import ScenarioConfig
from .crypto import (NONCE_SIZE, KeyPair, derive, hash, public_key_bytes, sign,
                     sym_encrypt, verify)
from .imt import build_imt
from .kdtree import Attribute, build, digitize, encrypt_tree
from .ledger import (Block, BlockBody, Chain, Payload, Registry, approve_and_append, mine,
                     tree_id_seed, validate_block)
from .records import CommFile, CommLog, peer_message, receipt_message

__all__ = [
    "CloudStore", "CommFile", "CommLog", "Device", "Simulation", "elect_miners", "flush",
    "step_communication",
]


# -- cloud -------------------------------------------------------------------------

@dataclass
class GetResult:
    status: str            # "ok" or "not-found"
    data: bytes | None = None


class CloudStore:
    """Content-addressed ciphertext store with injectable faults.

    Faults: ``drop(digest)`` forgets an object, ``corrupt(digest, byte)``
    flips one byte on every read, and ``deny_receipt`` makes the next upload
    go unsigned (its objects are then discarded).
    """

    def __init__(self, keypair: KeyPair):
        self.keypair = keypair
        self.objects: dict[bytes, bytes] = {}
        self.order: list[bytes] = []
        self.receipts: dict[int, tuple[bytes, bytes]] = {}
        self.dropped: set[bytes] = set()
        self.corrupted: dict[bytes, int] = {}
        self.deny_next = 0
        self._staged: dict[int, tuple[list[bytes], list[bytes], bytes, int]] = {}
        self._next_upload = 0

    @property
    def id(self) -> bytes:
        return self.keypair.owner_id

    def put(self, data: bytes) -> bytes:
        digest = hash(data)
        if digest not in self.objects:
            self.order.append(digest)
        self.objects[digest] = data
        return digest

    def get(self, digest: bytes) -> GetResult:
        if digest in self.dropped or digest not in self.objects:
            return GetResult("not-found")
        data = self.objects[digest]
        if digest in self.corrupted:
            k = self.corrupted[digest] % len(data)
            data = data[:k] + bytes([data[k] ^ 0xFF]) + data[k + 1:]
        return GetResult("ok", data)

    def drop(self, digest: bytes):
        self.dropped.add(digest)

    def corrupt(self, digest: bytes, byte: int):
        self.corrupted[digest] = byte

    def upload(self, device_id: bytes, ciphertexts: list[bytes], ts: int):
        """Stage a batch and sign ``h_1..h_m || ID(device) || TS``.

        Returns ``(upload_id, digests, sig_c)``, or ``None`` when the receipt
        is refused.
        """
        digests = [hash(c) for c in ciphertexts]
        if self.deny_next:
            self.deny_next -= 1
            return None
        upload_id = self._next_upload
        self._next_upload += 1
        sig_c = sign(self.keypair, receipt_message(digests, device_id, ts)).bytes
        self._staged[upload_id] = (digests, ciphertexts, sig_c, ts)
        return upload_id, digests, sig_c

    def commit(self, upload_id: int, device_pub, sig_d: bytes) -> bool:
        """Keep a staged batch once the device's mirror receipt verifies."""
        digests, ciphertexts, sig_c, ts = self._staged.pop(upload_id)
        if not verify(device_pub, receipt_message(digests, self.id, ts), sig_d):
            return False
        for c in ciphertexts:
            self.put(c)
        self.receipts[upload_id] = (sig_c, sig_d)
        return True

    def abort(self, upload_id: int):
        self._staged.pop(upload_id, None)

    def to_json(self) -> dict:
        return {
            "objects": [[d.hex(), self.objects[d].hex()] for d in self.order],
            "dropped": sorted(d.hex() for d in self.dropped),
            "corrupted": {d.hex(): b for d, b in sorted(self.corrupted.items())},
        }

    @classmethod
    def from_json(cls, data: dict, keypair: KeyPair | None = None) -> CloudStore:
        store = cls(keypair)
        for d, blob in data["objects"]:
            store.put(bytes.fromhex(blob))
        store.dropped = {bytes.fromhex(d) for d in data.get("dropped", [])}
        store.corrupted = {bytes.fromhex(d): int(b) for d, b in data.get("corrupted", {}).items()}
        return store


def cloud_get(cloud: CloudStore, digest: bytes) -> GetResult:
    return cloud.get(digest)


# -- devices -----------------------------------------------------------------------

@dataclass(eq=False)
class Device:
    index: int
    id: bytes
    keypair: KeyPair
    aspe_key: AspeKey
    sym_key: bytes
    storage_cap: int
    registry: Registry | None = None
    suffix_length: int = 0
    buffer: list[CommFile] = field(default_factory=list)
    buffer_bytes: int = 0
    chain_suffix: deque = field(default_factory=deque)
    receipts: list = field(default_factory=list)  # (ts, digests, sig_c) per accepted upload

    def room_for(self, size: int) -> bool:
        return self.buffer_bytes + size <= self.storage_cap

    def receive(self, f: CommFile):
        size = len(f.to_bytes())
        if not self.room_for(size):
            raise RuntimeError("buffer over storage cap")
        self.buffer.append(f)
        self.buffer_bytes += size

    def validate_block(self, block: Block, prev: Block):
        return validate_block(block, prev, self.registry)

    def remember(self, block: Block):
        self.chain_suffix.append(block)
        if self.suffix_length and len(self.chain_suffix) > self.suffix_length:
            self.chain_suffix.popleft()


def make_device(index: int, seed: int, l: int, storage_cap: int) -> Device:
    s = seed.to_bytes(8, "big")
    i = index.to_bytes(4, "big")
    dev_id = derive(b"device-id", s, i, size=16)
    kp = KeyPair.from_seed(derive(b"device-sign", s, i), dev_id)
    key_seed = int.from_bytes(derive(b"device-aspe", s, i, size=8), "big")
    return Device(index, dev_id, kp, keygen(l, key_seed), derive(b"device-sym", s, i), storage_cap)


def make_cloud(seed: int) -> CloudStore:
    s = seed.to_bytes(8, "big")
    return CloudStore(KeyPair.from_seed(derive(b"cloud-sign", s), derive(b"cloud-id", s, size=16)))


def flush(d: Device, cloud: CloudStore, peers: dict[bytes, Device], schema: list[Attribute], ts: int,
          rng: np.random.Generator) -> Payload | None:
    """Outsource the buffer and build the broadcast; ``None`` if the cloud refuses."""
    if not d.buffer:
        raise ValueError("nothing to flush")
    files = list(d.buffer)
    plain = [f.to_bytes() for f in files]
    ciphertexts = [sym_encrypt(d.sym_key, p, rng.bytes(NONCE_SIZE)) for p in plain]
    staged = cloud.upload(d.id, ciphertexts, ts)
    if staged is None:
        return None
    upload_id, digests, sig_c = staged
    if not verify(cloud.keypair.public, receipt_message(digests, d.id, ts), sig_c):
        cloud.abort(upload_id)
        return None
    mirror = sign(d.keypair, receipt_message(digests, cloud.id, ts)).bytes
    if not cloud.commit(upload_id, d.keypair.public, mirror):
        return None
    d.receipts.append((ts, digests, sig_c))

    logs = []
    for f, p in zip(files, plain):
        efh = sym_encrypt(d.sym_key, hash(p), rng.bytes(NONCE_SIZE))
        peer = peers[f.peer_of(d.id)]
        logs.append(CommLog(efh, peer.id, f.ts, sign(peer.keypair, peer_message(efh, f.ts)).bytes))

    points = [digitize(f.attrs, schema) for f in files]
    tree = build(points, [(h, k) for k, h in enumerate(digests)], id_seed=tree_id_seed(d.id, ts))
    imt = build_imt(encrypt_tree(tree, d.aspe_key), logs)
    logs_bytes = b"".join(log.to_bytes() for log in logs)
    sig_d = sign(d.keypair, hash(logs_bytes + sig_c)).bytes
    body = BlockBody(d.id, ts, len(schema), tuple(logs), sig_c, sig_d, imt.to_bytes())
    d.buffer.clear()
    d.buffer_bytes = 0
    return Payload(body, sign(d.keypair, imt.root_hash).bytes)


def payload_bytes(p: Payload) -> bytes:
    return p.body.to_bytes() + p.imt_root_sig


def elect_miners(devices, busy: set, rng: np.random.Generator, p: float = 0.5) -> list:
    """Random subset of the devices not occupied this round (empty if all are)."""
    free = [d for d in devices if d.id not in busy]
    if not free:
        return []
    chosen = [d for d in free if rng.random() < p]
    return chosen or [free[int(rng.integers(len(free)))]]


def random_attrs(schema: list[Attribute], rng: np.random.Generator) -> tuple[float, ...]:
    out = []
    for a in schema:
        if a.categorical:
            out.append(float(rng.integers(len(a.values))))
        else:
            out.append(float(rng.uniform(a.lo, a.hi)))
    return tuple(out)


# -- simulation --------------------------------------------------------------------

@dataclass
class Event:
    event: str
    ts: int
    actor: str
    digest: str = ""
    detail: str = ""

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


class Simulation:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.schema = cfg.attributes
        self.devices = [make_device(i, cfg.seed, cfg.dim, cfg.storage_cap) for i in range(cfg.devices)]
        self.by_id = {d.id: d for d in self.devices}
        self.cloud = make_cloud(cfg.seed)
        self.registry = Registry({d.id: d.keypair.public for d in self.devices}, self.cloud.keypair.public,
                                 cfg.difficulty)
        for d in self.devices:
            d.registry = self.registry
            d.suffix_length = cfg.chain_suffix_length
        self.chain = Chain()
        self.pending: deque[Payload] = deque()
        self.events: list[Event] = []
        self.step_no = 0
        self.files_created: list[CommFile] = []
        self.files_flushed = 0
        self.block_files: dict[int, list[CommFile]] = {}
        self._payload_files: dict[int, list[CommFile]] = {}
        self.max_buffer_seen = 0

    @property
    def now(self) -> int:
        return self.cfg.start_ts + self.step_no * self.cfg.step_seconds

    def log(self, event, actor, digest=b"", detail=""):
        actor = actor.hex() if isinstance(actor, bytes) else str(actor)
        self.events.append(Event(event, self.now, actor, digest.hex() if digest else "", detail))

    def _flush(self, d: Device, busy: set) -> bool:
        files = list(d.buffer)
        payload = flush(d, self.cloud, self.by_id, self.schema, self.now, self.rng)
        busy.add(d.id)
        if payload is None:
            self.log("flush-aborted", d.id, detail=f"{len(files)} files kept")
            return False
        self.files_flushed += len(files)
        self._payload_files[id(payload)] = files
        self.pending.append(payload)
        self.log("flush", d.id, hash(payload_bytes(payload)), f"{len(files)} files")
        return True

    def step(self):
        busy: set[bytes] = set()
        for fault in self.cfg.deny_receipt:
            if fault.step == self.step_no:
                self.cloud.deny_next += 1
                self.log("fault-deny-receipt", self.devices[fault.device].id)
        step_communication(self, busy)
        self.mining_round(busy)
        self.step_no += 1

    def mining_round(self, busy: set) -> bool:
        if not self.pending:
            return False
        miners = elect_miners(self.devices, busy, self.rng, self.cfg.miner_probability)
        if not miners:
            self.log("mining-deferred", "network")
            return False
        payload = self.pending[0]
        winner = miners[int(self.rng.integers(len(miners)))]
        header = mine(payload, self.chain.tip.digest(), self.cfg.difficulty, winner.id)
        block = Block(header, payload.body)
        self.log("mined", winner.id, block.digest(), f"nonce={header.nonce}")
        if approve_and_append(self.chain, block, self.devices):
            self.pending.popleft()
            self.block_files[len(self.chain) - 1] = self._payload_files.pop(id(payload))
            for d in self.devices:
                d.remember(block)
            self.log("appended", winner.id, block.digest(), f"height={len(self.chain) - 1}")
            return True
        self.log("rejected", winner.id, block.digest())
        return False

    def drain(self):
        busy: set[bytes] = set()
        for d in self.devices:
            if d.buffer:
                self._flush(d, busy)
        while self.pending:
            self.mining_round(set())

    def apply_cloud_faults(self):
        for f in self.cfg.cloud_faults:
            if not 0 <= f.object < len(self.cloud.order):
                self.log("fault-skipped", "cloud", detail=f"no object {f.object}")
                continue
            digest = self.cloud.order[f.object]
            if f.kind == "drop":
                self.cloud.drop(digest)
            else:
                self.cloud.corrupt(digest, f.byte)
            self.log(f"fault-{f.kind}", "cloud", digest)

    def run(self) -> Chain:
        for _ in range(self.cfg.steps):
            self.step()
        if self.cfg.drain:
            self.drain()
        self.apply_cloud_faults()
        return self.chain

    def write_events(self, path):
        Path(path).write_text("".join(e.to_json() + "\n" for e in self.events))


def step_communication(sim: Simulation, busy: set | None = None) -> list[CommFile]:
    """One step of traffic on every topology edge.

    An edge with rate ``r`` carries ``floor(r)`` files plus one more with
    probability ``r - floor(r)``. A file that would overflow an endpoint's
    buffer first triggers that endpoint's flush; if the flush fails the
    exchange is refused.
    """
    busy = set() if busy is None else busy
    cfg = sim.cfg
    made = []
    for a, b in cfg.topology:
        count = int(math.floor(cfg.rate))
        if sim.rng.random() < cfg.rate - count:
            count += 1
        for _ in range(count):
            sender, receiver = (a, b) if sim.rng.integers(2) == 0 else (b, a)
            src, dst = sim.devices[sender], sim.devices[receiver]
            f = CommFile(src.id, dst.id, sim.now, random_attrs(sim.schema, sim.rng), sim.rng.bytes(cfg.file_size))
            size = len(f.to_bytes())
            ok = True
            for d in (src, dst):
                if not d.room_for(size):
                    sim.log("storage-full", d.id)
                    if not d.buffer or not sim._flush(d, busy) or not d.room_for(size):
                        ok = False
            if not ok:
                sim.log("refused", src.id, hash(f.to_bytes()))
                continue
            src.receive(f)
            dst.receive(f)
            sim.files_created.append(f)
            made.append(f)
            sim.max_buffer_seen = max(sim.max_buffer_seen, src.buffer_bytes, dst.buffer_bytes)
            sim.log("file", src.id, hash(f.to_bytes()), dst.id.hex())
    return made


# -- user key material -----------------------------------------------------------------

def keys_document(sim: Simulation) -> dict:
    """Everything the querier holds: device keys, public registry, schema."""
    from .aspe import key_to_bytes
    from .config import _attr_dict

    return {
        "difficulty": sim.cfg.difficulty,
        "cloud": {"id": sim.cloud.id.hex(), "public": public_key_bytes(sim.cloud.keypair.public).hex()},
        "devices": [
            {
                "index": d.index,
                "id": d.id.hex(),
                "public": d.keypair.public_bytes().hex(),
                "aspe_key": key_to_bytes(d.aspe_key).hex(),
                "sym_key": d.sym_key.hex(),
            }
            for d in sim.devices
        ],
        "attributes": [_attr_dict(a) for a in sim.schema],
    }


def expected_hits(sim: Simulation, rect, ts_lo: int, ts_hi: int, participants=None) -> set[tuple[int, bytes]]:
    """Plaintext replay: (block index, file digest) pairs a query must return."""
    out = set()
    for bi, files in sim.block_files.items():
        device = sim.chain.blocks[bi].body.device_id
        for f in files:
            if not ts_lo <= f.ts <= ts_hi:
                continue
            if participants is not None and not ({device, f.peer_of(device)} & set(participants)):
                continue
            if rect.contains(digitize(f.attrs, sim.schema).coords):
                out.add((bi, hash(f.to_bytes())))
    return out

