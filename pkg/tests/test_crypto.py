import numpy as np
import pytest

from iotledger.crypto import (DIGEST_SIZE, SIG_SIZE, DecryptionError, KeyPair, derive, hash, public_key_bytes,
                              public_key_from_bytes, sign, sym_ciphertext_size, sym_decrypt, sym_encrypt, verify)


def test_hash_basics():
    assert hash(b"x") == hash(b"x")
    assert len(hash(b"")) == DIGEST_SIZE
    # SHA-256 of the empty string
    assert hash(b"").hex().startswith("e3b0c442")


def test_hash_bit_flip_corpus():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        msg = bytearray(rng.bytes(int(rng.integers(1, 64))))
        h = hash(bytes(msg))
        bit = int(rng.integers(len(msg) * 8))
        msg[bit // 8] ^= 1 << (bit % 8)
        assert hash(bytes(msg)) != h


def test_derive_is_injective_on_parts():
    assert derive(b"a", b"bc") != derive(b"a", b"b", b"c")
    assert derive(b"a", b"x") != derive(b"b", b"x")
    assert len(derive(b"a", size=16)) == 16 and len(derive(b"a", size=80)) == 80
    assert derive(b"a", size=80)[:32] == derive(b"a")


def test_sign_round_trip():
    kp = KeyPair.from_seed(b"seed", b"owner")
    sig = sign(kp, b"msg")
    assert len(sig.bytes) == SIG_SIZE and sig.signer_id == b"owner"
    assert verify(kp.public, b"msg", sig)
    assert verify(kp.public, b"msg", sig.bytes)
    # deterministic scheme, keys reproducible from seed
    assert sign(KeyPair.from_seed(b"seed", b"owner"), b"msg").bytes == sig.bytes


def test_verify_rejections():
    kps = [KeyPair.from_seed(bytes([i]), bytes([i])) for i in range(8)]
    for i, a in enumerate(kps):
        sig = sign(a, b"hello")
        for j, b in enumerate(kps):
            assert verify(b.public, b"hello", sig) == (i == j)
    kp = kps[0]
    sig = sign(kp, b"hello").bytes
    for pos in range(5):
        assert not verify(kp.public, b"hello"[:pos] + b"X" + b"hello"[pos + 1:], sig)
    for pos in range(SIG_SIZE):
        bad = bytearray(sig)
        bad[pos] ^= 0x80
        assert not verify(kp.public, b"hello", bytes(bad))
    assert not verify(kp.public, b"hello", sig[:-1])
    assert not verify(kp.public, b"hello", "not bytes")
    assert not verify(None, b"hello", sig)


def test_public_key_bytes_round_trip():
    kp = KeyPair.generate(b"g")
    raw = public_key_bytes(kp.public)
    assert len(raw) == 32 and kp.public_bytes() == raw
    assert verify(public_key_from_bytes(raw), b"m", sign(kp, b"m"))


def test_sym_round_trip():
    key = derive(b"k")
    for pt in (b"", b"a", bytes(range(256))):
        ct = sym_encrypt(key, pt)
        assert len(ct) == sym_ciphertext_size(len(pt))
        assert sym_decrypt(key, ct) == pt
        if pt:
            assert pt not in ct


def test_sym_nonces():
    key = derive(b"k")
    cts = {sym_encrypt(key, b"same") for _ in range(50)}
    assert len(cts) == 50
    assert sym_encrypt(key, b"same", bytes(12)) == sym_encrypt(key, b"same", bytes(12))
    with pytest.raises(ValueError):
        sym_encrypt(key, b"x", bytes(11))


def test_sym_authentication():
    key = derive(b"k")
    ct = sym_encrypt(key, bytes(64))
    with pytest.raises(DecryptionError):
        sym_decrypt(derive(b"other"), ct)
    for pos in range(len(ct)):
        bad = bytearray(ct)
        bad[pos] ^= 0x01
        with pytest.raises(DecryptionError):
            sym_decrypt(key, bytes(bad))
    with pytest.raises(DecryptionError):
        sym_decrypt(key, ct[:20])
