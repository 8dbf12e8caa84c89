"""Paillier encryption, fixed-point codec, truncated digests and node signatures.

Paillier uses the ``g = n + 1`` variant, so ``lambda = phi(n)`` and
``mu = phi(n)^{-1} mod n``.  Node signatures are RSA with a full-domain hash
(MGF1/SHA-256 expanded to the modulus length).  Key generation takes an
optional seed so test keys are reproducible; without a seed it draws from
the OS entropy pool.
"""

from __future__ import annotations

import base64
import hashlib
import json
import random
import secrets
from dataclasses import dataclass

import gmpy2

DEFAULT_PAILLIER_BITS = 2048
TEST_PAILLIER_BITS = 512
DEFAULT_SIGNING_BITS = 2048
TEST_SIGNING_BITS = 1024
RSA_E = 65537

PROFILES = {
    "test-512": {"paillier_bits": TEST_PAILLIER_BITS, "signing_bits": TEST_SIGNING_BITS},
    "default-2048": {"paillier_bits": DEFAULT_PAILLIER_BITS, "signing_bits": DEFAULT_SIGNING_BITS},
}


class KeyMismatchError(ValueError):
    pass


class PlaintextRangeError(ValueError):
    pass


class OverflowBudgetError(ValueError):
    """Accumulated fixed-point magnitude would wrap modulo ``n``."""


def _rng(seed) -> random.Random | secrets.SystemRandom:
    if seed is None:
        return secrets.SystemRandom()
    if isinstance(seed, random.Random):
        return seed
    return random.Random(seed)


def _prime(bits: int, rng) -> gmpy2.mpz:
    while True:
        cand = gmpy2.mpz(rng.getrandbits(bits)) | (gmpy2.mpz(3) << (bits - 2)) | 1
        p = gmpy2.next_prime(cand)
        if p.bit_length() == bits:
            return p


def _prime_pair(bits: int, rng) -> tuple[gmpy2.mpz, gmpy2.mpz, gmpy2.mpz]:
    half = bits // 2
    while True:
        p, q = _prime(half, rng), _prime(bits - half, rng)
        n = p * q
        if p != q and n.bit_length() == bits:
            return p, q, n


# -- Paillier -----------------------------------------------------------------


@dataclass(frozen=True)
class PaillierPublicKey:
    n: int

    @property
    def nsquare(self) -> int:
        return self.n * self.n

    @property
    def ciphertext_bytes(self) -> int:
        return (self.nsquare.bit_length() + 7) // 8

    def fingerprint(self) -> str:
        return hashlib.sha256(str(self.n).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class PaillierPrivateKey:
    public: PaillierPublicKey
    lam: int
    mu: int


@dataclass(frozen=True)
class PaillierKeypair:
    public: PaillierPublicKey
    private: PaillierPrivateKey

    @property
    def n(self) -> int:
        return self.public.n


@dataclass(frozen=True)
class Ciphertext:
    value: int
    public: PaillierPublicKey

    def to_bytes(self) -> bytes:
        return int(self.value).to_bytes(self.public.ciphertext_bytes, "big")


def paillier_keygen(bits: int = DEFAULT_PAILLIER_BITS, seed=None) -> PaillierKeypair:
    if bits < 64:
        raise ValueError("key too small")
    rng = _rng(seed)
    p, q, n = _prime_pair(bits, rng)
    lam = (p - 1) * (q - 1)
    mu = gmpy2.invert(lam, n)
    pub = PaillierPublicKey(int(n))
    return PaillierKeypair(pub, PaillierPrivateKey(pub, int(lam), int(mu)))


def encrypt(m: int, pub: PaillierPublicKey, rng=None) -> Ciphertext:
    """Encrypt an integer ``0 <= m < n``; ``rng`` fixes the blinding factor."""
    m = int(m)
    n = pub.n
    if not 0 <= m < n:
        raise PlaintextRangeError(f"plaintext must satisfy 0 <= m < n")
    source = rng if rng is not None else secrets.SystemRandom()
    while True:
        r = gmpy2.mpz(source.randrange(1, n))
        if gmpy2.gcd(r, n) == 1:
            break
    nsq = gmpy2.mpz(pub.nsquare)
    # (1 + n)^m = 1 + m n  (mod n^2)
    c = (1 + m * gmpy2.mpz(n)) % nsq * gmpy2.powmod(r, n, nsq) % nsq
    return Ciphertext(int(c), pub)


def decrypt(c: Ciphertext, priv: PaillierPrivateKey) -> int:
    if c.public != priv.public:
        raise KeyMismatchError("ciphertext was not produced under this key")
    n = gmpy2.mpz(priv.public.n)
    u = gmpy2.powmod(gmpy2.mpz(c.value), priv.lam, n * n)
    return int((u - 1) // n * priv.mu % n)


def _same_key(*cs: Ciphertext, pub: PaillierPublicKey) -> None:
    for c in cs:
        if c.public != pub:
            raise KeyMismatchError("operands encrypted under different keys")


def hom_add(c1: Ciphertext, c2: Ciphertext, pub: PaillierPublicKey) -> Ciphertext:
    """Ciphertext of ``m1 + m2 mod n``."""
    _same_key(c1, c2, pub=pub)
    return Ciphertext(int(gmpy2.mpz(c1.value) * c2.value % pub.nsquare), pub)


def hom_scale(c: Ciphertext, k: int, pub: PaillierPublicKey) -> Ciphertext:
    """Ciphertext of ``k * m mod n`` for an integer ``k >= 0``."""
    _same_key(c, pub=pub)
    if k < 0:
        raise ValueError("scalar must be nonnegative; encode signs with the codec")
    return Ciphertext(int(gmpy2.powmod(c.value, k, pub.nsquare)), pub)


def hom_identity(pub: PaillierPublicKey) -> Ciphertext:
    """The neutral element ``1``, a (deterministic) encryption of zero."""
    return Ciphertext(1, pub)


# -- fixed point --------------------------------------------------------------


@dataclass(frozen=True)
class FixedPointCodec:
    """Signed fixed-point numbers in ``Z_n``: ``v -> round(S v) mod n``.

    Residues above ``n/2`` decode as negative.  ``scale_power`` at decode time
    picks the divisor ``S`` (a reading) or ``S^2`` (coefficient times reading).
    """

    n: int
    scale: int = 2**16

    def __post_init__(self):
        if self.scale < 1 or self.scale & (self.scale - 1):
            raise ValueError("scale must be a power of two")

    @property
    def budget(self) -> int:
        """Largest integer magnitude that still decodes unambiguously."""
        return (self.n - 1) // 2

    def encode_int(self, k: int) -> int:
        if abs(k) > self.budget:
            raise OverflowBudgetError(f"|{k}| exceeds the plaintext budget")
        return k % self.n

    def decode_int(self, m: int) -> int:
        m = int(m) % self.n
        return m - self.n if m > self.n // 2 else m

    def encode(self, v: float) -> int:
        return self.encode_int(int(round(v * self.scale)))

    def decode(self, m: int, scale_power: int = 1) -> float:
        return self.decode_int(m) / self.scale**scale_power


def fp_encode(v: float, codec: FixedPointCodec) -> int:
    return codec.encode(v)


def fp_decode(m: int, codec: FixedPointCodec, scale_power: int = 1) -> float:
    return codec.decode(m, scale_power)


def check_budget(n: int, n_nodes: int, max_reading: float, max_coeff: float, scale: int) -> None:
    """Raise if ``n_nodes`` weighted readings could overflow the codec."""
    worst = n_nodes * (abs(max_coeff) * scale + 1) * (abs(max_reading) * scale + 1)
    if worst * 2 >= n:
        raise OverflowBudgetError(
            f"worst-case sum {worst:.3e} does not fit a {n.bit_length()}-bit modulus"
        )


# -- digests and signatures ---------------------------------------------------


def digest64(data: bytes) -> bytes:
    """First 64 bits of SHA-1."""
    return hashlib.sha1(data).digest()[:8]


def timestamp_bytes(ts: int) -> bytes:
    return int(ts).to_bytes(8, "big", signed=False)


@dataclass(frozen=True)
class SigningPublicKey:
    n: int
    e: int = RSA_E

    @property
    def size(self) -> int:
        return (self.n.bit_length() + 7) // 8


@dataclass(frozen=True)
class SigningPrivateKey:
    public: SigningPublicKey
    d: int


@dataclass(frozen=True)
class SigningKeypair:
    public: SigningPublicKey
    private: SigningPrivateKey


def signing_keygen(bits: int = DEFAULT_SIGNING_BITS, seed=None) -> SigningKeypair:
    rng = _rng(seed)
    while True:
        p, q, n = _prime_pair(bits, rng)
        phi = (p - 1) * (q - 1)
        if gmpy2.gcd(RSA_E, phi) == 1:
            break
    d = gmpy2.invert(RSA_E, phi)
    pub = SigningPublicKey(int(n))
    return SigningKeypair(pub, SigningPrivateKey(pub, int(d)))


def _full_domain_hash(message: bytes, n: int) -> int:
    size = (n.bit_length() + 7) // 8
    out = b""
    counter = 0
    while len(out) < size:
        out += hashlib.sha256(message + counter.to_bytes(4, "big")).digest()
        counter += 1
    return int.from_bytes(out[:size], "big") % n


def _signed_message(digest: bytes, timestamp: int) -> bytes:
    return bytes(digest) + timestamp_bytes(timestamp)


def sign(digest: bytes, timestamp: int, priv: SigningPrivateKey) -> bytes:
    h = _full_domain_hash(_signed_message(digest, timestamp), priv.public.n)
    s = gmpy2.powmod(h, priv.d, priv.public.n)
    return int(s).to_bytes(priv.public.size, "big")


def verify(sig: bytes, digest: bytes, timestamp: int, pub: SigningPublicKey) -> bool:
    """Check ``sig`` over ``(digest, timestamp)``; malformed input gives False."""
    try:
        if pub is None or len(sig) != pub.size:
            return False
        s = int.from_bytes(sig, "big")
        if s >= pub.n:
            return False
        h = _full_domain_hash(_signed_message(digest, timestamp), pub.n)
        return int(gmpy2.powmod(s, pub.e, pub.n)) == h
    except (TypeError, ValueError, AttributeError):
        return False


# -- key files ----------------------------------------------------------------


def _pem(label: str, payload: dict) -> str:
    body = base64.encodebytes(json.dumps(payload, sort_keys=True).encode()).decode()
    return f"-----BEGIN {label}-----\n{body}-----END {label}-----\n"


def _unpem(text: str, label: str) -> dict:
    begin, end = f"-----BEGIN {label}-----", f"-----END {label}-----"
    try:
        body = text.split(begin, 1)[1].split(end, 1)[0]
    except IndexError:
        raise ValueError(f"no {label} block found") from None
    return json.loads(base64.decodebytes(body.encode()))


def dump_paillier(kp: PaillierKeypair, private: bool = True) -> str:
    out = _pem("SECREAD PAILLIER PUBLIC KEY", {"n": hex(kp.public.n)})
    if private:
        out += _pem(
            "SECREAD PAILLIER PRIVATE KEY",
            {"n": hex(kp.public.n), "lambda": hex(kp.private.lam), "mu": hex(kp.private.mu)},
        )
    return out


def load_paillier_public(text: str) -> PaillierPublicKey:
    return PaillierPublicKey(int(_unpem(text, "SECREAD PAILLIER PUBLIC KEY")["n"], 16))


def load_paillier(text: str) -> PaillierKeypair:
    data = _unpem(text, "SECREAD PAILLIER PRIVATE KEY")
    pub = PaillierPublicKey(int(data["n"], 16))
    return PaillierKeypair(pub, PaillierPrivateKey(pub, int(data["lambda"], 16), int(data["mu"], 16)))


def dump_signing(kp: SigningKeypair, private: bool = True) -> str:
    out = _pem("SECREAD RSA PUBLIC KEY", {"n": hex(kp.public.n), "e": kp.public.e})
    if private:
        out += _pem("SECREAD RSA PRIVATE KEY", {"n": hex(kp.public.n), "e": kp.public.e,
                                                 "d": hex(kp.private.d)})
    return out


def load_signing_public(text: str) -> SigningPublicKey:
    data = _unpem(text, "SECREAD RSA PUBLIC KEY")
    return SigningPublicKey(int(data["n"], 16), int(data["e"]))


def load_signing(text: str) -> SigningKeypair:
    data = _unpem(text, "SECREAD RSA PRIVATE KEY")
    pub = SigningPublicKey(int(data["n"], 16), int(data["e"]))
    return SigningKeypair(pub, SigningPrivateKey(pub, int(data["d"], 16)))
