import numpy as np
import pytest

from iotledger.config import CloudFault, ReceiptFault, parse_config
from iotledger.crypto import DecryptionError, derive, hash, sym_decrypt, sym_encrypt, verify
from iotledger.device_sim import (CloudStore, Simulation, cloud_get, elect_miners, expected_hits, flush,
                                  make_cloud, make_device, payload_bytes)
from iotledger.geometry import HyperRect
from iotledger.kdtree import Attribute
from iotledger.ledger import validate_chain
from iotledger.records import CommFile, receipt_message

BASE = """
devices: 2
attributes:
  - {name: temperature, min: 0, max: 50}
  - {name: wind_power, min: 0, max: 10}
topology: [[0, 1]]
seed: 3
steps: 10
rate: 1.0
file_size: 32
storage_cap: 100000
difficulty: 4
"""


def cfg(text=BASE, **kw):
    c = parse_config(text)
    for k, v in kw.items():
        setattr(c, k, v)
    return c


def events(sim, kind):
    return [e for e in sim.events if e.event == kind]


def test_rate_zero_no_traffic():
    sim = Simulation(cfg(rate=0.0))
    sim.run()
    assert sim.files_created == [] and not events(sim, "file") and len(sim.chain) == 1


def test_two_devices_ten_steps():
    a = Simulation(cfg(drain=False))
    for _ in range(10):
        a.step()
    assert len(a.files_created) == 10
    dirs = [f.sender_id for f in a.files_created]
    assert len(set(dirs)) == 2  # both directions occur for this seed
    b = Simulation(cfg(drain=False))
    for _ in range(10):
        b.step()
    assert [f.sender_id for f in b.files_created] == dirs
    assert [f.to_bytes() for f in b.files_created] == [f.to_bytes() for f in a.files_created]


def test_fractional_rate():
    sim = Simulation(cfg(rate=0.5, steps=400, drain=False))
    for _ in range(400):
        sim.step()
    assert 150 < len(sim.files_created) < 250
    sim = Simulation(cfg(rate=2.0, drain=False))
    for _ in range(5):
        sim.step()
    assert len(sim.files_created) == 10


def test_overflow_triggers_flush():
    record = 16 * 2 + 12 + 8 * 2 + 4 + 32
    sim = Simulation(cfg(storage_cap=3 * record, steps=8))
    sim.run()
    assert events(sim, "storage-full") and events(sim, "flush")
    assert sim.max_buffer_seen <= 3 * record
    assert validate_chain(sim.chain.blocks, sim.registry)


def _device_pair(l=2, cap=10_000):
    a, b = make_device(0, 0, l, cap), make_device(1, 0, l, cap)
    return a, b, make_cloud(0)


def _fill(a, b, n, rng):
    for i in range(n):
        a.receive(CommFile(a.id, b.id, 100 + i, tuple(rng.uniform(0, 1, 2)), rng.bytes(16)))


def test_flush_counts():
    a, b, cloud = _device_pair()
    rng = np.random.default_rng(0)
    _fill(a, b, 3, rng)
    files = list(a.buffer)
    schema = [Attribute("x"), Attribute("y")]
    p = flush(a, cloud, {a.id: a, b.id: b}, schema, 200, rng)
    assert len(cloud.objects) == 3
    assert len(p.body.logs) == 3
    assert len(p.body.imt.leaves()) == 3
    assert a.buffer == [] and a.buffer_bytes == 0
    # receipt symmetry
    ts, digests, sig_c = a.receipts[-1]
    assert verify(cloud.keypair.public, receipt_message(digests, a.id, ts), sig_c)
    (sig_c2, sig_d), = cloud.receipts.values()
    assert sig_c2 == sig_c and verify(a.keypair.public, receipt_message(digests, cloud.id, ts), sig_d)
    # logs carry encrypted file digests and peer signatures
    for f, log in zip(files, p.body.logs):
        assert sym_decrypt(a.sym_key, log.enc_file_hash) == hash(f.to_bytes())
        assert verify(b.keypair.public, log.signed_message(), log.peer_sig)
    assert p.body.sig_c == sig_c


def test_flush_replay_identical():
    out = []
    for _ in range(2):
        a, b, cloud = _device_pair()
        rng = np.random.default_rng(5)
        _fill(a, b, 4, rng)
        p = flush(a, cloud, {a.id: a, b.id: b}, [Attribute("x"), Attribute("y")], 300, rng)
        out.append(payload_bytes(p))
    assert out[0] == out[1]


def test_flush_denied_receipt():
    a, b, cloud = _device_pair()
    rng = np.random.default_rng(0)
    _fill(a, b, 3, rng)
    before = list(a.buffer)
    cloud.deny_next = 1
    assert flush(a, cloud, {a.id: a, b.id: b}, [Attribute("x"), Attribute("y")], 200, rng) is None
    assert cloud.objects == {} and a.buffer == before


def test_flush_empty_buffer():
    a, b, cloud = _device_pair()
    with pytest.raises(ValueError):
        flush(a, cloud, {}, [Attribute("x"), Attribute("y")], 1, np.random.default_rng(0))


def test_deny_receipt_in_scenario():
    c = cfg(deny_receipt=[ReceiptFault(step=9, device=0)])
    sim = Simulation(c)
    sim.run()
    assert validate_chain(sim.chain.blocks, sim.registry)


def test_receive_over_cap():
    a, b, _ = _device_pair(cap=10)
    with pytest.raises(RuntimeError):
        a.receive(CommFile(a.id, b.id, 0, (0.1, 0.2), b"x" * 64))


class _D:
    def __init__(self, i):
        self.id = bytes([i])


def test_elect_miners():
    devs = [_D(i) for i in range(10)]
    assert elect_miners(devs, {d.id for d in devs}, np.random.default_rng(0)) == []
    busy = {d.id for d in devs[:5]}
    for seed in range(50):
        chosen = elect_miners(devs, busy, np.random.default_rng(seed))
        assert chosen and {d.id for d in chosen} <= {d.id for d in devs[5:]}
    a = elect_miners(devs, busy, np.random.default_rng(7))
    b = elect_miners(devs, busy, np.random.default_rng(7))
    assert [d.id for d in a] == [d.id for d in b]


def test_all_busy_defers_mining():
    sim = Simulation(cfg(steps=1, drain=False))
    sim.step()
    sim._flush(sim.devices[0], set())
    assert sim.pending
    assert not sim.mining_round({d.id for d in sim.devices})
    assert events(sim, "mining-deferred")


def test_cloud_store_faults():
    cloud = CloudStore(make_cloud(0).keypair)
    key = derive(b"k")
    blob = sym_encrypt(key, bytes(range(36)), bytes(12))
    assert len(blob) == 64
    d = cloud.put(blob)
    assert d == hash(blob)
    assert cloud_get(cloud, d).data == blob
    for k in range(64):
        cloud.corrupt(d, k)
        got = cloud_get(cloud, d)
        assert got.status == "ok" and got.data != blob
        with pytest.raises(DecryptionError):
            sym_decrypt(key, got.data)
    cloud.drop(d)
    assert cloud_get(cloud, d).status == "not-found"
    assert cloud_get(cloud, b"\x00" * 32).status == "not-found"


def test_cloud_json_round_trip():
    cloud = CloudStore(make_cloud(0).keypair)
    a, b = cloud.put(b"one"), cloud.put(b"two")
    cloud.drop(a)
    cloud.corrupt(b, 1)
    back = CloudStore.from_json(cloud.to_json())
    assert back.order == cloud.order and back.get(a).status == "not-found"
    assert back.get(b).data == cloud.get(b).data


SAMPLE = """
devices: 4
attributes:
  - {name: temperature, min: 0, max: 50}
  - {name: wind_power, min: 0, max: 10}
  - {name: wind_direction, values: [N, NE, E, SE, S, SW, W, NW]}
topology: [[0, 1], [1, 2], [2, 3], [3, 0]]
seed: 11
steps: 15
rate: 1.5
file_size: 40
storage_cap: 500
difficulty: 6
"""


def test_scenario_invariants():
    sim = Simulation(parse_config(SAMPLE))
    chain = sim.run()
    assert validate_chain(chain.blocks, sim.registry)
    logs = sum(len(b.body.logs) for b in chain.blocks)
    assert logs == sim.files_flushed == 2 * len(sim.files_created)
    assert sim.max_buffer_seen <= 500
    assert all(len(d.buffer) == 0 for d in sim.devices)
    for d in sim.devices:
        for ts, digests, sig_c in d.receipts:
            assert verify(sim.cloud.keypair.public, receipt_message(digests, d.id, ts), sig_c)
    for sig_c, sig_d in sim.cloud.receipts.values():
        assert len(sig_c) == len(sig_d) == 64
    # every block file really is in the cloud
    for bi, files in sim.block_files.items():
        assert len(files) == len(chain.blocks[bi].body.logs)
        for ref in chain.blocks[bi].body.cipher_refs():
            assert sim.cloud.get(ref).status == "ok"


def test_scenario_determinism():
    a = Simulation(parse_config(SAMPLE)).run()
    b = Simulation(parse_config(SAMPLE)).run()
    assert a.to_bytes() == b.to_bytes()
    assert a.tip.digest() == b.tip.digest()
    c = Simulation(cfg(SAMPLE, seed=12)).run()
    assert c.to_bytes() != a.to_bytes()


def test_chain_suffix_kept():
    sim = Simulation(cfg(SAMPLE, chain_suffix_length=2))
    sim.run()
    for d in sim.devices:
        assert len(d.chain_suffix) == 2
        assert d.chain_suffix[-1] is sim.chain.tip


def test_cloud_faults_applied():
    c = cfg(SAMPLE, cloud_faults=[CloudFault("drop", 0), CloudFault("corrupt", 1, 5), CloudFault("drop", 10 ** 6)])
    sim = Simulation(c)
    sim.run()
    assert sim.cloud.get(sim.cloud.order[0]).status == "not-found"
    assert sim.cloud.get(sim.cloud.order[1]).data != sim.cloud.objects[sim.cloud.order[1]]
    assert events(sim, "fault-skipped")


def test_expected_hits_oracle():
    sim = Simulation(parse_config(SAMPLE))
    sim.run()
    everything = HyperRect.from_bounds([(0, 1)] * 3)
    all_hits = expected_hits(sim, everything, 0, 2 ** 62)
    assert len(all_hits) == sim.files_flushed
    assert expected_hits(sim, everything, 0, 0) == set()
