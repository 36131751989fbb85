"""Additively homomorphic encryption (Paillier, ``g = N + 1``).

Besides the textbook operations this module provides :func:`select`, the
blinded selection primitive the oblivious evaluation is built from: given an
encrypted unit vector ``e_j`` and a public payload vector, the holder of the
payload returns an encryption of ``payload[j]`` without learning ``j``.

Security holds against semi-honest parties only. 512-bit keys are accepted
for tests and are not secure.

Randomness comes from an explicit ``rng`` argument (anything with
``randrange``/``getrandbits``). Seeded :class:`random.Random` instances make
test runs replayable; pass ``None`` to use the system CSPRNG.
"""

from __future__ import annotations

import hashlib
import random
import secrets
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import gmpy2

from .errors import KeyMismatch, LengthMismatch, MalformedEncoding, PlaintextSpaceTooSmall

SUPPORTED_BITS = (512, 1024, 2048)
DEFAULT_KAPPA = 40

PUBLIC_MAGIC = b"PYVK"
SECRET_MAGIC = b"PYVS"
KEY_VERSION = 1


def make_rng(seed=None):
    """Seeded PRNG for replayable runs, system CSPRNG when `seed` is None."""
    if seed is None:
        return secrets.SystemRandom()
    return random.Random(seed)


def _bytes_for(bits: int) -> int:
    return (bits + 7) // 8


@dataclass(frozen=True)
class HePublicKey:
    n: int
    nsquare: object = field(init=False, repr=False, compare=False)
    fingerprint: bytes = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = gmpy2.mpz(self.n)
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "nsquare", n * n)
        raw = self.n.to_bytes(_bytes_for(self.n.bit_length()), "big")
        object.__setattr__(self, "fingerprint", hashlib.sha256(b"paillier" + raw).digest()[:16])

    @property
    def bits(self) -> int:
        return self.n.bit_length()

    @property
    def n_bytes(self) -> int:
        """Fixed wire width of a plaintext-space integer."""
        return _bytes_for(self.bits)

    @property
    def ct_bytes(self) -> int:
        """Fixed wire width of a ciphertext."""
        return _bytes_for(2 * self.bits)

    def noise(self, rng) -> object:
        r = gmpy2.mpz(rng.randrange(1, self.n))
        return gmpy2.powmod(r, self.n, self.nsquare)


@dataclass(frozen=True)
class HeSecretKey:
    p: int = field(repr=False)
    q: int = field(repr=False)
    public: HePublicKey = field(init=False, repr=False)

    def __post_init__(self):
        p, q = gmpy2.mpz(self.p), gmpy2.mpz(self.q)
        object.__setattr__(self, "public", HePublicKey(int(p * q)))
        psq, qsq = p * p, q * q
        g = gmpy2.mpz(self.public.n + 1)
        # CRT decryption constants
        hp = gmpy2.invert((gmpy2.powmod(g, p - 1, psq) - 1) // p, p)
        hq = gmpy2.invert((gmpy2.powmod(g, q - 1, qsq) - 1) // q, q)
        object.__setattr__(self, "_crt", (p, q, psq, qsq, hp, hq, gmpy2.invert(p, q),
                                          gmpy2.invert(psq, qsq)))

    def decrypt_raw(self, c) -> int:
        p, q, psq, qsq, hp, hq, p_inv_q, _ = self._crt
        mp = ((gmpy2.powmod(c, p - 1, psq) - 1) // p) * hp % p
        mq = ((gmpy2.powmod(c, q - 1, qsq) - 1) // q) * hq % q
        return int(mp + ((mq - mp) * p_inv_q % q) * p)

    def noise(self, rng) -> object:
        """Uniform N-th residue mod N^2, sampled through the factorization.

        Modulo p^2 the N-th residues are exactly the p-th powers (q is
        invertible mod p - 1 because gcd(N, phi(N)) = 1), so half-length
        exponents suffice; likewise modulo q^2.
        """
        p, q, psq, qsq, _, _, _, psq_inv_qsq = self._crt
        xp = gmpy2.powmod(gmpy2.mpz(rng.randrange(1, p)), p, psq)
        xq = gmpy2.powmod(gmpy2.mpz(rng.randrange(1, q)), q, qsq)
        return xp + ((xq - xp) * psq_inv_qsq % qsq) * psq


@dataclass(frozen=True)
class HeKeyPair:
    public: HePublicKey
    secret: HeSecretKey

    def encrypt(self, m: int, rng=None) -> "HeCiphertext":
        """Encrypt under the own public key, using the CRT shortcut."""
        return _encrypt(self.public, m, self.secret.noise(rng or make_rng()))

    def decrypt(self, c: "HeCiphertext") -> int:
        return dec(self.secret, c)


@dataclass(frozen=True)
class HeCiphertext:
    value: object  # gmpy2.mpz in [1, N^2)
    pk: HePublicKey = field(repr=False)

    def __eq__(self, other):
        return (isinstance(other, HeCiphertext) and self.pk.fingerprint == other.pk.fingerprint
                and int(self.value) == int(other.value))

    def __hash__(self):
        return hash((self.pk.fingerprint, int(self.value)))

    def to_bytes(self) -> bytes:
        return int(self.value).to_bytes(self.pk.ct_bytes, "big")

    @classmethod
    def from_bytes(cls, pk: HePublicKey, data: bytes) -> "HeCiphertext":
        v = int.from_bytes(data, "big")
        if not 0 < v < pk.nsquare:
            raise MalformedEncoding("ciphertext out of range", 0)
        return cls(gmpy2.mpz(v), pk)


@dataclass(frozen=True)
class SelectionVector:
    """Element-wise encryption of a unit vector ``e_j`` of length n."""

    ciphertexts: tuple

    def __len__(self):
        return len(self.ciphertexts)

    def __iter__(self):
        return iter(self.ciphertexts)

    @classmethod
    def unit(cls, keys: HeKeyPair, j: int, n: int, rng=None) -> "SelectionVector":
        if not 0 <= j < n:
            raise ValueError(f"index {j} outside 0..{n - 1}")
        rng = rng or make_rng()
        return cls(tuple(keys.encrypt(int(i == j), rng) for i in range(n)))


# --- key generation --------------------------------------------------------

def _prime(rng, bits: int):
    while True:
        candidate = gmpy2.mpz(rng.getrandbits(bits)) | (3 << (bits - 2)) | 1
        p = gmpy2.next_prime(candidate)
        if p.bit_length() == bits:
            return p


def keygen(bits: int = 1024, rng=None) -> HeKeyPair:
    """Fresh key pair with an exactly `bits`-bit modulus."""
    if bits not in SUPPORTED_BITS:
        raise ValueError(f"key size must be one of {SUPPORTED_BITS}")
    rng = rng or make_rng()
    while True:
        p = _prime(rng, bits // 2)
        q = _prime(rng, bits // 2)
        # gcd(pq, (p-1)(q-1)) = 1 holds for equal-length distinct primes
        if p != q and (p * q).bit_length() == bits:
            break
    secret = HeSecretKey(int(p), int(q))
    return HeKeyPair(secret.public, secret)


# --- homomorphic operations ------------------------------------------------

def _encrypt(pk: HePublicKey, m: int, noise) -> HeCiphertext:
    if not 0 <= m < pk.n:
        raise ValueError("plaintext outside Z_N")
    return HeCiphertext((1 + gmpy2.mpz(m) * pk.n) * noise % pk.nsquare, pk)


def enc(pk: HePublicKey, m: int, rng=None) -> HeCiphertext:
    return _encrypt(pk, m, pk.noise(rng or make_rng()))


def _same_key(pk_fp: bytes, c: HeCiphertext):
    if c.pk.fingerprint != pk_fp:
        raise KeyMismatch("ciphertext was created under a different key")


def dec(sk: HeSecretKey, c: HeCiphertext) -> int:
    _same_key(sk.public.fingerprint, c)
    return sk.decrypt_raw(c.value)


def add(c1: HeCiphertext, c2: HeCiphertext) -> HeCiphertext:
    _same_key(c1.pk.fingerprint, c2)
    return HeCiphertext(c1.value * c2.value % c1.pk.nsquare, c1.pk)


def scalar_mul(c: HeCiphertext, k: int) -> HeCiphertext:
    if not 0 <= k < c.pk.n:
        raise ValueError("scalar outside Z_N")
    return HeCiphertext(gmpy2.powmod(c.value, k, c.pk.nsquare), c.pk)


def rerandomize(pk: HePublicKey, c: HeCiphertext, rng=None) -> HeCiphertext:
    _same_key(pk.fingerprint, c)
    return HeCiphertext(c.value * pk.noise(rng or make_rng()) % pk.nsquare, pk)


def linear_combination(pk: HePublicKey, cts: Sequence[HeCiphertext], coeffs: Sequence[int]):
    """Raw ``prod c_j^k_j``: an encryption of ``sum k_j m_j`` (not rerandomized)."""
    if len(cts) != len(coeffs):
        raise LengthMismatch(f"{len(cts)} ciphertexts vs {len(coeffs)} coefficients")
    acc = gmpy2.mpz(1)
    nsq = pk.nsquare
    for c, k in zip(cts, coeffs):
        _same_key(pk.fingerprint, c)
        if not 0 <= k < pk.n:
            raise ValueError("coefficient outside Z_N")
        if k:
            acc = acc * (c.value if k == 1 else gmpy2.powmod(c.value, k, nsq)) % nsq
    return acc


def select(pk: HePublicKey, selector: SelectionVector | Sequence[HeCiphertext],
           payload: Sequence[int], pad_bits: Optional[int] = None, rng=None) -> HeCiphertext:
    """Obliviously pick ``payload[j]`` where `selector` encrypts ``e_j``.

    With `pad_bits` set, every payload entry must lie in ``[0, 2**pad_bits)``.
    """
    cts = tuple(selector)
    if len(cts) != len(payload):
        raise LengthMismatch(f"selector of length {len(cts)} for payload of length {len(payload)}")
    if pad_bits is not None and any(not 0 <= v < 1 << pad_bits for v in payload):
        raise ValueError(f"payload entries must be {pad_bits}-bit")
    acc = linear_combination(pk, cts, payload)
    return HeCiphertext(acc * pk.noise(rng or make_rng()) % pk.nsquare, pk)


def check_plaintext_space(pk: HePublicKey, q_count: int, kappa: int) -> None:
    """Blinded values plus pads must never wrap around N."""
    if pk.n <= (1 << (kappa + 1)) * q_count:
        raise PlaintextSpaceTooSmall(
            f"N has {pk.bits} bits; need N > 2^{kappa + 1} * {q_count}")


# --- key files -------------------------------------------------------------

def _put_int(v: int) -> bytes:
    raw = v.to_bytes(_bytes_for(v.bit_length()), "big")
    return struct.pack(">I", len(raw)) + raw


def _get_ints(data: bytes, pos: int, count: int) -> list:
    out = []
    for _ in range(count):
        if pos + 4 > len(data):
            raise MalformedEncoding("truncated integer length", pos)
        (size,) = struct.unpack_from(">I", data, pos)
        pos += 4
        if pos + size > len(data):
            raise MalformedEncoding("truncated integer", pos)
        out.append(int.from_bytes(data[pos:pos + size], "big"))
        pos += size
    if pos != len(data):
        raise MalformedEncoding("trailing bytes", pos)
    return out


def _check_header(data: bytes, magic: bytes):
    if data[:4] != magic:
        raise MalformedEncoding("bad key magic", 0)
    if len(data) < 5 or data[4] != KEY_VERSION:
        raise MalformedEncoding("unsupported key version", 4)


def dump_public(pk: HePublicKey) -> bytes:
    return PUBLIC_MAGIC + bytes([KEY_VERSION]) + _put_int(pk.n)


def load_public(data: bytes) -> HePublicKey:
    _check_header(data, PUBLIC_MAGIC)
    (n,) = _get_ints(data, 5, 1)
    return HePublicKey(n)


def dump_secret(keys: HeKeyPair) -> bytes:
    return SECRET_MAGIC + bytes([KEY_VERSION]) + _put_int(keys.secret.p) + _put_int(keys.secret.q)


def load_secret(data: bytes) -> HeKeyPair:
    _check_header(data, SECRET_MAGIC)
    p, q = _get_ints(data, 5, 2)
    secret = HeSecretKey(p, q)
    return HeKeyPair(secret.public, secret)
