"""Shared builders: small hand-made chains whose files carry known points."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pytest

from iotledger.device_sim import CloudStore, Device, flush, make_cloud, make_device
from iotledger.kdtree import Attribute
from iotledger.ledger import Block, Chain, Registry, mine
from iotledger.records import CommFile
from iotledger.search import UserKeys

T0 = 1_700_000_000


def unit_schema(l: int) -> list[Attribute]:
    return [Attribute(f"x{j}", 0.0, 1.0) for j in range(l)]


@dataclass
class Kit:
    l: int
    devices: list[Device]
    cloud: CloudStore
    registry: Registry
    chain: Chain = field(default_factory=Chain)
    # block index -> files in flush order
    files: dict[int, list[CommFile]] = field(default_factory=dict)

    @property
    def keys(self) -> UserKeys:
        return UserKeys({d.id: d.aspe_key for d in self.devices}, {d.id: d.sym_key for d in self.devices})

    @property
    def schema(self):
        return unit_schema(self.l)


def make_kit(l: int, seed: int = 0, difficulty: int = 0, n_devices: int = 2) -> Kit:
    devs = [make_device(i, seed, l, 1 << 40) for i in range(n_devices)]
    cloud = make_cloud(seed)
    reg = Registry({d.id: d.keypair.public for d in devs}, cloud.keypair.public, difficulty)
    for d in devs:
        d.registry = reg
    return Kit(l, devs, cloud, reg)


def add_block(kit: Kit, points, owner: int = 0, peer: int = 1, ts0: int | None = None,
              rng: np.random.Generator | None = None, body_size: int = 8) -> Block:
    """Flush ``points`` as files from ``owner`` to ``peer`` and mine them into a block."""
    rng = rng or np.random.default_rng(len(kit.chain))
    d, p = kit.devices[owner], kit.devices[peer]
    if ts0 is None:
        ts0 = kit.chain.tip.header.timestamp + 1 if len(kit.chain) > 1 else T0
    files = [CommFile(d.id, p.id, ts0 + i, tuple(float(x) for x in pt), rng.bytes(body_size))
             for i, pt in enumerate(np.asarray(points, dtype=float).reshape(-1, kit.l))]
    d.buffer = list(files)
    flush_ts = ts0 + max(len(files) - 1, 0)
    payload = flush(d, kit.cloud, {x.id: x for x in kit.devices}, kit.schema, flush_ts, rng)
    assert payload is not None
    header = mine(payload, kit.chain.tip.digest(), kit.registry.difficulty)
    block = Block(header, payload.body)
    kit.chain.append(block)
    kit.files[len(kit.chain) - 1] = files
    return block


@pytest.fixture
def kit2():
    return make_kit(2)
