import math

import numpy as np
import pytest

from iotledger.aspe import decrypt_point, identity_key, keygen
from iotledger.geometry import DimensionError
from iotledger.kdtree import (Attribute, FormatError, build, digitize, enc_tree_from_bytes, encrypt_tree,
                              gen_ids, kdtree_from_bytes, max_height, structure_errors)

SCHEMA = [Attribute("temperature", 0, 50), Attribute("wind_power", 0, 10), Attribute("wind_direction", 0, 7)]


def test_digitize_example():
    p = digitize((26, 7, 3), SCHEMA)
    assert p.coords == pytest.approx((0.52, 0.7, 3 / 7), abs=1e-15)


def test_digitize_edges():
    assert digitize((0, 0, 0), SCHEMA).coords == (0.0, 0.0, 0.0)
    assert digitize((50, 10, 7), SCHEMA).coords == (1.0, 1.0, 1.0)
    assert digitize((3.0,), [Attribute("flat", 3.0, 3.0)]).coords == (0.5,)
    with pytest.raises(DimensionError):
        digitize((1, 2), SCHEMA)


def test_digitize_categorical():
    dirs = Attribute("wind_direction", values=("N", "NE", "E", "SE", "S", "SW", "W", "NW"))
    assert digitize(("E",), [dirs]).coords == (2 / 7,)
    assert digitize((2,), [dirs]).coords == (2 / 7,)
    with pytest.raises(ValueError):
        digitize(("up",), [dirs])
    with pytest.raises(ValueError):
        digitize((8,), [dirs])
    assert digitize(("only",), [Attribute("c", values=("only",))]).coords == (0.5,)


def test_empty_input():
    assert build([]) is None


def test_two_points():
    t = build([(0, 0), (1, 1)])
    assert len(t) == 3 and t.size[0] == 2
    assert list(t.size[1:]) == [1, 1] and t.is_leaf(1) and t.is_leaf(2)
    assert np.array_equal(t.lo[1], [0, 0]) and np.array_equal(t.lo[2], [1, 1])


def test_children_split_parent_at_median():
    t = build([(0, 3), (1, 2), (2, 1), (3, 0)])
    # root splits x at the lower median 1, both children are internal
    a, b = int(t.left[0]), int(t.right[0])
    assert not t.is_leaf(a) and not t.is_leaf(b)
    assert np.array_equal(t.lo[a], [0, 0]) and np.array_equal(t.hi[a], [1, 3])
    assert np.array_equal(t.lo[b], [1, 0]) and np.array_equal(t.hi[b], [3, 3])


def test_single_point():
    t = build([(0.3, 0.4)])
    assert len(t) == 1 and t.is_leaf(0)
    assert np.array_equal(t.lo[0], t.hi[0])


def _paths(t):
    """Yield (leaf, ancestors) pairs."""
    stack = [(0, [])]
    while stack:
        i, anc = stack.pop()
        if t.is_leaf(i):
            yield i, anc
        else:
            stack += [(int(t.left[i]), anc + [i]), (int(t.right[i]), anc + [i])]


@pytest.mark.parametrize("n,l", [(7, 2), (1, 3), (2, 1), (33, 3), (100, 5), (257, 2)])
def test_structure(n, l):
    pts = np.random.default_rng(n).uniform(0, 1, (n, l))
    t = build(pts)
    assert len(t.leaves()) == n
    assert structure_errors(t) == []
    assert t.height() <= max_height(n)
    assert sorted(t.log_ref[t.leaves()]) == list(range(n))
    for leaf, anc in _paths(t):
        p = pts[t.log_ref[leaf]]
        assert np.array_equal(t.lo[leaf], p) and np.array_equal(t.hi[leaf], p)
        for a in anc:
            assert np.all(t.lo[a] <= p) and np.all(p <= t.hi[a])


def test_ties_balanced():
    pts = np.zeros((9, 2))
    pts[:, 1] = np.arange(9) % 2
    t = build(pts)
    assert structure_errors(t) == []
    # equal keys go left in input order
    left_leaves = [int(t.log_ref[i]) for i in range(len(t)) if t.is_leaf(i)]
    assert sorted(left_leaves) == list(range(9))


def test_deterministic_and_ids():
    pts = np.random.default_rng(0).uniform(0, 1, (20, 3))
    a, b = build(pts, id_seed=b"s"), build(pts, id_seed=b"s")
    assert a.to_bytes() == b.to_bytes()
    assert len(set(a.ids)) == len(a) and all(len(x) == 16 for x in a.ids)
    assert a.ids == gen_ids(b"s", len(a))
    assert build(pts, id_seed=b"t").ids != a.ids


def test_payload_validation():
    with pytest.raises(ValueError):
        build([(0, 0), (1, 1)], payloads=[(bytes(32), 0)])
    with pytest.raises(ValueError):
        build([(0, 0), (1, 1)], payloads=[(bytes(32), 0), (bytes(32), 0)])
    with pytest.raises(ValueError):
        build([(0, float("inf"))])


def test_encrypt_identity_key():
    pts = np.random.default_rng(1).uniform(0, 1, (10, 2))
    t = build(pts)
    e = encrypt_tree(t, identity_key(2))
    assert np.array_equal(e.enc_lo, np.hstack([t.lo, np.ones((len(t), 1))]))
    assert np.array_equal(e.enc_hi, np.hstack([t.hi, np.ones((len(t), 1))]))


def test_encrypt_round_trip_and_shape():
    pts = np.random.default_rng(2).uniform(0, 1, (50, 4))
    t = build(pts)
    k = keygen(4, 9)
    e = encrypt_tree(t, k)
    assert len(e) == len(t)
    assert np.array_equal(e.left, t.left) and np.array_equal(e.right, t.right) and e.ids == t.ids
    for i in range(len(t)):
        assert np.allclose(decrypt_point(k, e.enc_lo[i])[:-1], t.lo[i], atol=1e-9)
        assert np.allclose(decrypt_point(k, e.enc_hi[i])[:-1], t.hi[i], atol=1e-9)
    with pytest.raises(DimensionError):
        encrypt_tree(t, keygen(3, 0))


def test_serialization_round_trip():
    pts = np.random.default_rng(3).uniform(0, 1, (17, 3))
    t = build(pts, id_seed=b"x")
    raw = t.to_bytes()
    back = kdtree_from_bytes(raw, 3)
    assert back.to_bytes() == raw
    assert np.array_equal(back.lo, t.lo) and back.ids == t.ids
    e = encrypt_tree(t, keygen(3, 0))
    assert enc_tree_from_bytes(e.to_bytes(), 3).to_bytes() == e.to_bytes()


def test_parse_rejects_garbage():
    raw = build(np.random.default_rng(4).uniform(0, 1, (5, 2))).to_bytes()
    for bad in (raw[:-1], raw + b"\x00", b"", raw[:10]):
        with pytest.raises(FormatError):
            kdtree_from_bytes(bad, 2)
    with pytest.raises(FormatError):
        kdtree_from_bytes(raw, 3)


def test_max_height():
    assert max_height(1) == 1
    assert max_height(2) == 2
    assert max_height(8) == 4
    assert max_height(9) == math.ceil(math.log2(9)) + 1
