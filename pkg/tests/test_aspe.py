import numpy as np
import pytest

from iotledger.aspe import (COND_CAP, DET_FLOOR, R_RANGE, AspeKey, EncPoint, Trapdoor, decode_vector,
                            decrypt_point, enc_compare, enc_point_in_rect, enc_rects_inter, encode_vector,
                            encrypt_point, encrypt_points, identity_key, key_from_bytes, key_to_bytes, keygen,
                            make_trapdoor)
from iotledger.geometry import (AnchorQuery, DimensionError, HyperRect, anchors_for_rect, are_rects_inter,
                                dist2, is_point_in_rect)


def R(*bounds):
    return HyperRect.from_bounds(bounds)


def test_keygen_deterministic_and_invertible():
    a, b = keygen(2, 11), keygen(2, 11)
    assert np.array_equal(a.M, b.M)
    assert np.allclose(a.M @ a.M_inv, np.eye(3), atol=1e-9)
    assert a == b


def test_keygen_seeds_differ():
    assert not np.array_equal(keygen(5, 1).M, keygen(5, 2).M)


@pytest.mark.parametrize("l", [1, 2, 5, 10, 16])
def test_keygen_conditioning(l):
    for seed in range(5):
        k = keygen(l, seed)
        assert k.M.shape == (l + 1, l + 1)
        assert abs(np.linalg.det(k.M)) >= DET_FLOOR
        assert np.linalg.cond(k.M) <= COND_CAP
        assert np.all(np.abs(k.M) <= 1.0)


def test_keygen_rejects_zero_dim():
    with pytest.raises(ValueError):
        keygen(0, 0)


def test_encrypt_identity_examples():
    k = identity_key(2)
    assert np.array_equal(encrypt_point(k, (2, 3)).vec, [2, 3, 1])
    assert np.array_equal(encrypt_point(k, (0, 0)).vec, [0, 0, 1])


def test_encrypt_round_trip():
    rng = np.random.default_rng(0)
    for l in (1, 3, 8):
        k = keygen(l, l)
        for _ in range(20):
            v = rng.uniform(-5, 5, l)
            back = decrypt_point(k, encrypt_point(k, v))
            assert np.allclose(back, np.append(v, 1.0), atol=1e-9)


def test_encrypt_points_matches_single():
    k = keygen(3, 4)
    pts = np.random.default_rng(1).uniform(0, 1, (10, 3))
    rows = encrypt_points(k, pts)
    for p, row in zip(pts, rows):
        assert np.allclose(row, encrypt_point(k, p).vec, rtol=0, atol=1e-14)


def test_encrypt_dimension_mismatch():
    with pytest.raises(DimensionError):
        encrypt_point(keygen(2, 0), (1, 2, 3))


def test_trapdoor_identity_example():
    k = identity_key(2)
    q = anchors_for_rect(R((0, 2), (-1, 1)))  # first pair: A_in=(0.5, 0), A_out=(-0.5, 0)
    tr = make_trapdoor(k, q, seed=0, r=1.0)
    assert np.allclose(tr.enc_in[0], [0.5, 0.0, -0.125])
    q = AnchorQuery(tuple(((1.0, 0.0), (3.0, 0.0)) for _ in range(4)))
    for r in (0.5, 1.0, 2.0):
        tr = make_trapdoor(k, q, seed=0, r=r)
        assert np.allclose(tr.enc_in[0], r * np.array([1.0, 0.0, -0.5]))


def test_trapdoor_pair_count_and_scales():
    k = keygen(3, 0)
    q = anchors_for_rect(R((0, 1), (0, 1), (0, 1)))
    tr = make_trapdoor(k, q, seed=5)
    assert len(tr.pairs) == 6
    base = make_trapdoor(k, q, seed=5, r=1.0)
    scales = tr.enc_in[:, 0] / base.enc_in[:, 0]
    assert np.allclose(tr.enc_out, base.enc_out * scales[:, None])
    assert np.all((scales >= R_RANGE[0]) & (scales <= R_RANGE[1]))


def test_trapdoor_seeds_differ():
    k = keygen(2, 0)
    q = anchors_for_rect(R((0.2, 0.6), (0.1, 0.9)))
    a, b = make_trapdoor(k, q, 1), make_trapdoor(k, q, 2)
    assert np.max(np.abs(a.enc_in - b.enc_in)) > 1e-9
    assert a.to_bytes() != b.to_bytes()


def test_trapdoor_rejects_bad_input():
    k = keygen(2, 0)
    with pytest.raises(DimensionError):
        make_trapdoor(k, anchors_for_rect(R((0, 1))), 0)
    with pytest.raises(ValueError):
        make_trapdoor(k, anchors_for_rect(R((0, 1), (0, 1))), 0, r=-1.0)
    with pytest.raises(DimensionError):
        Trapdoor(np.zeros((3, 3)), np.zeros((3, 3)))


def test_enc_compare_examples():
    k = identity_key(2)
    v = encrypt_point(k, (0, 0))
    q = AnchorQuery(tuple(((1.0, 0.0), (3.0, 0.0)) for _ in range(4)))
    tr = make_trapdoor(k, q, 0, r=1.0)
    assert float(tr.w[0] @ v.vec) == pytest.approx(4.0)
    assert enc_compare(tr.pairs[0], v) == 1
    # the bisector x = 2
    assert enc_compare(tr.pairs[0], encrypt_point(k, (2, 7))) == 0
    assert enc_compare(tr.pairs[0], encrypt_point(k, (2.5, 0))) == -1


def test_enc_compare_matches_plaintext_distances():
    rng = np.random.default_rng(9)
    for l in (1, 2, 3, 5):
        k = keygen(l, 100 + l)
        for _ in range(2500):
            v, a, b = rng.uniform(-2, 2, (3, l))
            q = AnchorQuery(tuple((tuple(a), tuple(b)) for _ in range(2 * l)))
            tr = make_trapdoor(k, q, int(rng.integers(1 << 30)))
            expect = np.sign(dist2(v, b) - dist2(v, a))
            assert enc_compare(tr.pairs[0], encrypt_point(k, v)) == expect


def test_enc_compare_dimension_mismatch():
    k = keygen(2, 0)
    tr = make_trapdoor(k, anchors_for_rect(R((0, 1), (0, 1))), 0)
    with pytest.raises(DimensionError):
        enc_compare(tr.pairs[0], np.ones(5))


def test_aspe_inner_product_identity():
    rng = np.random.default_rng(2)
    for l in (1, 2, 4, 9):
        k = keygen(l, l)
        for _ in range(200):
            v, a = rng.uniform(-10, 10, (2, l))
            lhs = float((k.M.T @ np.append(a, -0.5 * a @ a)) @ (k.M_inv @ np.append(v, 1.0)))
            rhs = float(a @ v - 0.5 * a @ a)
            assert lhs == pytest.approx(rhs, rel=1e-6, abs=1e-9)


def test_enc_point_in_rect_examples():
    cases = [(R((0, 1), (0, 1)), (0.5, 0.5)), (R((1, 4), (2, 5)), (2, 3)),
             (R((1, 4), (2, 5)), (0, 3)), (R((1, 4), (2, 5)), (1, 2))]
    for seed in range(5):
        k = keygen(2, seed)
        for rect, p in cases:
            q = anchors_for_rect(rect)
            tr = make_trapdoor(k, q, seed)
            assert enc_point_in_rect(tr, encrypt_point(k, p)) == is_point_in_rect(p, q)


def test_enc_rects_inter_examples():
    cases = [(R((0, 2), (0, 2)), R((1, 3), (1, 3)), True),
             (R((0, 1), (0, 1)), R((2, 3), (2, 3)), False),
             (R((0, 1), (0, 1)), R((1, 2), (1, 2)), True)]
    for seed in range(5):
        k = keygen(2, seed)
        for q, r, expect in cases:
            tr = make_trapdoor(k, anchors_for_rect(q), seed)
            er = (encrypt_point(k, r.lo), encrypt_point(k, r.hi))
            assert enc_rects_inter(tr, er) == are_rects_inter(anchors_for_rect(q), r) == expect


def _corpus(rng, l, n):
    for i in range(n):
        if i % 3 == 0:
            # dyadic grid values hit faces and corners exactly
            q = np.sort(rng.integers(0, 9, (l, 2)) / 8, axis=1)
            r = np.sort(rng.integers(0, 9, (l, 2)) / 8, axis=1)
            p = rng.integers(0, 9, l) / 8
        else:
            q = np.sort(rng.uniform(0, 1, (l, 2)), axis=1)
            r = np.sort(rng.uniform(0, 1, (l, 2)), axis=1)
            p = rng.uniform(0, 1, l)
        yield HyperRect.from_bounds(q), HyperRect.from_bounds(r), p


@pytest.mark.parametrize("l", [1, 2, 3, 5, 10])
def test_encrypted_predicates_match_plaintext(l):
    rng = np.random.default_rng(l)
    k = keygen(l, 7 * l)
    for i, (q, r, p) in enumerate(_corpus(rng, l, 10_000)):
        aq = anchors_for_rect(q)
        tr = make_trapdoor(k, aq, i)
        assert enc_point_in_rect(tr, encrypt_point(k, p)) == q.contains(p) == is_point_in_rect(p, aq)
        er = (encrypt_point(k, r.lo), encrypt_point(k, r.hi))
        assert enc_rects_inter(tr, er) == q.intersects(r)


def test_sign_preserved_for_any_scale():
    rng = np.random.default_rng(4)
    k = keygen(3, 1)
    for q, r, p in _corpus(rng, 3, 500):
        aq = anchors_for_rect(q)
        er = (encrypt_point(k, r.lo), encrypt_point(k, r.hi))
        ep = encrypt_point(k, p)
        outs = {(enc_point_in_rect(t, ep), enc_rects_inter(t, er))
                for t in (make_trapdoor(k, aq, 0, r=s) for s in (0.5, 1.0, 2.0))}
        assert len(outs) == 1


def test_vector_and_key_wire_format():
    vec = np.array([1.5, -2.0, 0.25])
    raw = encode_vector(vec)
    assert raw[:4] == b"\x00\x00\x00\x02" and len(raw) == 4 + 24
    assert np.array_equal(decode_vector(raw), vec)
    with pytest.raises(ValueError):
        decode_vector(raw[:-1])
    k = keygen(4, 3)
    assert key_from_bytes(key_to_bytes(k)) == k
    with pytest.raises(ValueError):
        key_from_bytes(key_to_bytes(k) + b"\x00")
    assert EncPoint(vec).to_bytes() == raw


def test_key_from_matrix_validation():
    with pytest.raises(DimensionError):
        AspeKey.from_matrix(np.eye(3)[:2])
