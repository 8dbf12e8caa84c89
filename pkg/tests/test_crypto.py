from __future__ import annotations

import hashlib
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from secread.crypto import (
    Ciphertext,
    FixedPointCodec,
    KeyMismatchError,
    OverflowBudgetError,
    PlaintextRangeError,
    check_budget,
    decrypt,
    digest64,
    dump_paillier,
    dump_signing,
    encrypt,
    fp_decode,
    fp_encode,
    hom_add,
    hom_scale,
    load_paillier,
    load_paillier_public,
    load_signing,
    load_signing_public,
    paillier_keygen,
    sign,
    signing_keygen,
    verify,
)


@pytest.fixture(scope="module")
def kp():
    return paillier_keygen(512, seed="tests/paillier")


@pytest.fixture(scope="module")
def other():
    return paillier_keygen(512, seed="tests/other")


@pytest.fixture(scope="module")
def sk():
    return signing_keygen(1024, seed="tests/sign")


def test_keygen_deterministic_and_sized(kp):
    again = paillier_keygen(512, seed="tests/paillier")
    assert again.public == kp.public
    assert kp.n.bit_length() == 512
    assert paillier_keygen(512).n != kp.n


def test_encrypt_matches_textbook_formula(kp):
    n, nsq = kp.n, kp.n**2
    m = 123456789
    c = encrypt(m, kp.public, random.Random(5))
    r = random.Random(5).randrange(1, n)
    assert c.value == pow(n + 1, m, nsq) * pow(r, n, nsq) % nsq


@pytest.mark.parametrize("m", [0, 1, -1])
def test_roundtrip_boundaries(kp, m):
    m = m % kp.n
    assert decrypt(encrypt(m, kp.public), kp.private) == m


def test_roundtrip_random(kp):
    rng = random.Random(1)
    for _ in range(100):
        m = rng.randrange(kp.n)
        assert decrypt(encrypt(m, kp.public, rng), kp.private) == m


def test_plaintext_range(kp):
    with pytest.raises(PlaintextRangeError):
        encrypt(kp.n, kp.public)
    with pytest.raises(PlaintextRangeError):
        encrypt(-1, kp.public)


def test_probabilistic(kp):
    assert encrypt(7, kp.public).value != encrypt(7, kp.public).value


def test_homomorphism_examples(kp):
    pub, priv = kp.public, kp.private
    assert decrypt(hom_add(encrypt(2, pub), encrypt(3, pub), pub), priv) == 5
    assert decrypt(hom_scale(encrypt(11, pub), 1, pub), priv) == 11
    c = hom_add(hom_scale(encrypt(4, pub), 3, pub), hom_scale(encrypt(6, pub), 5, pub), pub)
    assert decrypt(c, priv) == 42


@given(st.integers(0, 2**600), st.integers(0, 2**600), st.integers(0, 2**64), st.integers(0, 2**64))
@settings(max_examples=100, deadline=None)
def test_homomorphism_laws(kp, m1, m2, k1, k2):
    pub, priv, n = kp.public, kp.private, kp.n
    m1, m2 = m1 % n, m2 % n
    c1, c2 = encrypt(m1, pub), encrypt(m2, pub)
    assert decrypt(hom_add(c1, c2, pub), priv) == (m1 + m2) % n
    assert decrypt(hom_scale(c1, k1, pub), priv) == k1 * m1 % n
    comp = hom_add(hom_scale(c1, k1, pub), hom_scale(c2, k2, pub), pub)
    assert decrypt(comp, priv) == (k1 * m1 + k2 * m2) % n


def test_key_mismatch(kp, other):
    a = encrypt(1, kp.public)
    b = encrypt(1, other.public)
    with pytest.raises(KeyMismatchError):
        hom_add(a, b, kp.public)
    with pytest.raises(KeyMismatchError):
        decrypt(a, other.private)
    with pytest.raises(ValueError):
        hom_scale(a, -1, kp.public)


def test_codec_examples(kp):
    codec = FixedPointCodec(kp.n)
    assert fp_encode(0.0, codec) == 0
    assert fp_decode(0, codec) == 0.0
    assert fp_encode(-1.5, codec) == kp.n - 98304
    assert fp_decode(kp.n - 98304, codec) == -1.5
    assert fp_decode(fp_encode(2.0, codec) * fp_encode(3.0, codec) % kp.n, codec, 2) == 6.0


@given(st.floats(-1e6, 1e6))
def test_codec_roundtrip(kp, v):
    codec = FixedPointCodec(kp.n)
    assert abs(fp_decode(fp_encode(v, codec), codec) - v) <= 1 / codec.scale


def test_codec_rejects_bad_scale(kp):
    with pytest.raises(ValueError):
        FixedPointCodec(kp.n, 1000)


def test_codec_budget(kp):
    codec = FixedPointCodec(kp.n)
    with pytest.raises(OverflowBudgetError):
        codec.encode_int(kp.n // 2 + 1)
    check_budget(kp.n, 128, 10_000.0, 5.0, 2**16)
    with pytest.raises(OverflowBudgetError):
        check_budget(2**48, 128, 10_000.0, 5.0, 2**16)


def test_weighted_sum_through_encryption(kp):
    pub, priv = kp.public, kp.private
    codec = FixedPointCodec(kp.n)
    rng = random.Random(2)
    pairs = [(rng.gauss(0, 1), rng.uniform(0, 200)) for _ in range(10)]
    acc = encrypt(0, pub, rng)
    exact = 0
    for ph, d in pairs:
        q = round(ph * codec.scale)
        e = fp_encode(d, codec)
        acc = hom_add(acc, hom_scale(encrypt(e, pub, rng), codec.encode_int(q), pub), pub)
        exact += q * round(d * codec.scale)
    m = decrypt(acc, priv)
    assert codec.decode_int(m) == exact
    plain = sum(ph * d for ph, d in pairs)
    assert abs(fp_decode(m, codec, 2) - plain) <= 10 * 2**-16 * sum(d for _, d in pairs)


def test_digest_vectors():
    assert digest64(b"").hex() == "da39a3ee5e6b4b0d"
    assert digest64(b"abc") == hashlib.sha1(b"abc").digest()[:8]
    assert digest64(b"xyz") == digest64(b"xyz")


def test_digest_avalanche():
    rng = random.Random(3)
    flips = []
    for _ in range(1000):
        msg = bytearray(rng.randbytes(32))
        a = int.from_bytes(digest64(bytes(msg)), "big")
        bit = rng.randrange(256)
        msg[bit // 8] ^= 1 << (bit % 8)
        b = int.from_bytes(digest64(bytes(msg)), "big")
        flips.append(bin(a ^ b).count("1"))
    assert abs(sum(flips) / len(flips) - 32) < 1.0


def test_sign_verify(sk):
    dg = digest64(b"payload")
    sig = sign(dg, 7, sk.private)
    assert verify(sig, dg, 7, sk.public)
    assert not verify(sig, dg, 8, sk.public)
    assert not verify(sig, digest64(b"other"), 7, sk.public)
    assert not verify(sig, dg, 7, signing_keygen(1024, seed="tests/wrong").public)


def test_signature_is_textbook_rsa(sk):
    sig = sign(digest64(b"m"), 1, sk.private)
    s = int.from_bytes(sig, "big")
    assert pow(pow(s, sk.public.e, sk.public.n), sk.private.d, sk.public.n) == s


@pytest.mark.parametrize("bad", [b"", b"\x00" * 3, b"\xff" * 128, b"\xff" * 200])
def test_malformed_signature_is_false(sk, bad):
    assert verify(bad, digest64(b"m"), 1, sk.public) is False


def test_verify_without_key(sk):
    assert verify(b"\x01" * 128, digest64(b"m"), 1, None) is False


def test_key_files(kp, sk):
    text = dump_paillier(kp)
    assert load_paillier(text) == kp
    assert load_paillier_public(dump_paillier(kp, private=False)) == kp.public
    assert load_signing(dump_signing(sk)) == sk
    assert load_signing_public(dump_signing(sk, private=False)) == sk.public
    with pytest.raises(ValueError):
        load_paillier(dump_paillier(kp, private=False))
