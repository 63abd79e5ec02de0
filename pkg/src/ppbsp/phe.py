"""Paillier partially homomorphic encryption with signed fixed-point encoding.

The cryptosystem is the textbook construction: a public key ``(n, g)`` with
``n = p*q`` and ``g = n + 1`` (the standard efficiency choice of generator,
which turns ``g^m mod n^2`` into the linear form ``1 + m*n``), and a private
key ``(lambda, mu)`` with ``lambda = lcm(p-1, q-1)`` and
``mu = L(g^lambda mod n^2)^-1 mod n`` where ``L(u) = (u-1)/n``.

Plaintexts are signed fixed-point numbers: a value ``x`` is stored as an
integer mantissa ``round(x * base^-exponent)`` mapped into ``Z_n``, with
negative values occupying the top third of ``Z_n``. The middle third is
deliberately unused so that overflow from accumulated arithmetic is detected
at decode time instead of silently wrapping.

Two ciphertexts can be added (:func:`hom_add`), and a ciphertext can be
multiplied by a plaintext scalar (:func:`mul_plain`). When operand exponents
differ, the coarser one is rescaled down so precision is never lost silently.

Keys and ciphertexts are immutable; every operation here is a pure function
and safe to call concurrently. Blinding randomness comes from the OS CSPRNG.
"""
from __future__ import annotations

import hashlib
import math
import secrets
from dataclasses import dataclass, field
from decimal import Decimal

import gmpy2
from gmpy2 import mpz

from . import ops
from .fixedpoint import MICRO_EXPONENT, as_fraction, scaled_decimal

DEFAULT_KEY_BITS = 2048
MIN_KEY_BITS = 256
DEFAULT_BASE = 10

# Serialized ciphertext envelope: value length (4B) | exponent (2B, signed)
# | key fingerprint (8B) | big-endian value padded to 2*key_bits.
ENVELOPE_HEADER_BYTES = 14
FINGERPRINT_BYTES = 8


class PheError(Exception):
    """Base class for cryptosystem errors."""


class EncodingOverflowError(PheError):
    """A plaintext magnitude exceeded the capacity of the encoding."""


class KeyMismatchError(PheError):
    """Operands or keys belong to different keypairs."""


class InvalidBlindingError(PheError):
    """An explicit blinding factor is not a unit modulo n."""


@dataclass(frozen=True)
class PublicKey:
    """Paillier public key ``(n, g)`` with cached derived values."""

    n: int
    g: int
    nsquare: int = field(init=False, repr=False, compare=False)
    fingerprint: bytes = field(init=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "nsquare", self.n * self.n)
        digest = hashlib.sha256(
            b"paillier-pk|" + self.n.to_bytes((self.n.bit_length() + 7) // 8, "big")
            + b"|" + self.g.to_bytes((self.g.bit_length() + 7) // 8, "big")
        ).digest()
        object.__setattr__(self, "fingerprint", digest[:FINGERPRINT_BYTES])
        if math.gcd(self.g, self.nsquare) != 1:
            raise PheError("generator g is not a unit modulo n^2")

    @property
    def key_bits(self) -> int:
        return self.n.bit_length()

    @property
    def max_mantissa(self) -> int:
        """Largest mantissa magnitude allowed by the three-band convention."""
        return self.n // 3

    @property
    def ciphertext_bytes(self) -> int:
        """Fixed serialized width of a ciphertext value: 2*key_bits."""
        return (2 * self.key_bits + 7) // 8

    def __repr__(self):
        return f"<PublicKey {self.key_bits} bits {self.fingerprint.hex()}>"


@dataclass(frozen=True)
class PrivateKey:
    """Paillier private key ``(lambda, mu)``.

    When the generating primes are supplied (they always are for keys made
    by :func:`keygen`), decryption uses the usual CRT split over p and q;
    otherwise it falls back to the direct ``L(c^lambda mod n^2) * mu mod n``
    formula. Both routes produce identical plaintexts.
    """

    lambda_: int
    mu: int
    public_key: PublicKey
    p: int | None = None
    q: int | None = None
    _crt: tuple = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        check = _l_function(gmpy2.powmod(self.public_key.g, self.lambda_,
                                         self.public_key.nsquare), self.public_key.n)
        if check * self.mu % self.public_key.n != 1:
            raise PheError("mu is not the inverse of L(g^lambda mod n^2)")
        if self.p is not None and self.q is not None:
            if self.p * self.q != self.public_key.n:
                raise KeyMismatchError("p*q does not match the public modulus")
            p, q, g = mpz(self.p), mpz(self.q), mpz(self.public_key.g)
            psq, qsq = p * p, q * q
            hp = gmpy2.invert(_l_function(gmpy2.powmod(g, p - 1, psq), p), p)
            hq = gmpy2.invert(_l_function(gmpy2.powmod(g, q - 1, qsq), q), q)
            p_inv_q = gmpy2.invert(p, q)
            object.__setattr__(self, "_crt", (p, q, psq, qsq, hp, hq, p_inv_q))

    def __repr__(self):
        return f"<PrivateKey for {self.public_key!r}>"


@dataclass(frozen=True)
class EncodedNumber:
    """Fixed-point plaintext: ``value = signed(mantissa) * base^exponent``.

    The mantissa lives in ``Z_n``; values in ``[0, n/3]`` are non-negative,
    values in ``[2n/3, n)`` are negative, and the middle third signals
    overflow.
    """

    public_key: PublicKey
    mantissa: int
    exponent: int
    base: int = DEFAULT_BASE

    def signed_mantissa(self) -> int:
        n = self.public_key.n
        if self.mantissa < 0 or self.mantissa >= n:
            raise EncodingOverflowError("mantissa outside Z_n")
        if 3 * self.mantissa <= n:
            return self.mantissa
        if 3 * self.mantissa >= 2 * n:
            return self.mantissa - n
        raise EncodingOverflowError(
            "mantissa in the unused middle third of Z_n: accumulated "
            "arithmetic exceeded the plaintext capacity")


def _l_function(u, n):
    return (u - 1) // n


def _random_prime(bits: int) -> int:
    # Top two bits forced so the product of two such primes has exactly
    # 2*bits bits; candidate drawn from the OS CSPRNG.
    while True:
        candidate = mpz(secrets.randbits(bits) | (3 << (bits - 2)) | 1)
        prime = gmpy2.next_prime(candidate)
        if prime.bit_length() == bits:
            return int(prime)


def keygen(bits: int = DEFAULT_KEY_BITS, primes: tuple[int, int] | None = None):
    """Generate a Paillier keypair.

    Args:
      bits: modulus size; even and at least 256. 2048 is the default.
      primes: explicit ``(p, q)`` for deterministic test vectors; bypasses
        the bit-size checks.

    Returns:
      ``(PublicKey, PrivateKey)``.
    """
    if primes is not None:
        p, q = primes
        if p == q:
            raise ValueError("p and q must be distinct")
        if not (gmpy2.is_prime(mpz(p)) and gmpy2.is_prime(mpz(q))):
            raise ValueError("injected p, q must both be prime")
    else:
        if bits % 2 != 0:
            raise ValueError(f"key size must be even, got {bits}")
        if bits < MIN_KEY_BITS:
            raise ValueError(f"key size must be at least {MIN_KEY_BITS} bits, got {bits}")
        p = _random_prime(bits // 2)
        q = p
        while q == p:
            q = _random_prime(bits // 2)
    n = p * q
    g = n + 1
    lambda_ = int(gmpy2.lcm(p - 1, q - 1))
    nsquare = n * n
    try:
        mu = int(gmpy2.invert(_l_function(gmpy2.powmod(g, lambda_, nsquare), n), n))
    except ZeroDivisionError as exc:
        raise ValueError(f"unsuitable prime pair ({p}, {q}): mu does not exist") from exc
    public = PublicKey(n=n, g=g)
    private = PrivateKey(lambda_=lambda_, mu=mu, public_key=public, p=p, q=q)
    ops.tick(ops.KEYGEN)
    return public, private


def encode(public_key: PublicKey, value, base: int = DEFAULT_BASE,
           exponent: int = MICRO_EXPONENT) -> EncodedNumber:
    """Encode a real value as a signed fixed-point mantissa.

    Accepts int, str, Decimal or Fraction (floats are converted through
    their shortest decimal representation, for convenience only; money
    paths should pass exact types).
    """
    if isinstance(value, float):
        value = Decimal(repr(value))
    frac = as_fraction(value)
    scaled = frac * (base ** -exponent if exponent <= 0 else as_fraction(1) / base ** exponent)
    mantissa = round(scaled)
    if 3 * abs(mantissa) >= public_key.n:
        raise EncodingOverflowError(
            f"|{value}| exceeds the capacity n/3 * {base}^{exponent}")
    if mantissa < 0:
        mantissa += public_key.n
    return EncodedNumber(public_key, mantissa, exponent, base)


def decode(encoded: EncodedNumber) -> Decimal:
    """Exact decimal value of an encoded number (base-10 encodings)."""
    signed = encoded.signed_mantissa()
    if encoded.base == 10:
        return scaled_decimal(signed, encoded.exponent)
    frac = as_fraction(signed) * as_fraction(encoded.base) ** encoded.exponent
    from .fixedpoint import fraction_to_decimal
    return fraction_to_decimal(frac)


@dataclass(frozen=True)
class Ciphertext:
    """A Paillier ciphertext carrying fixed-point exponent metadata."""

    public_key: PublicKey
    value: int
    exponent: int
    base: int = DEFAULT_BASE

    def __post_init__(self):
        if self.value < 0 or self.value >= self.public_key.nsquare:
            raise PheError("ciphertext value outside Z_{n^2}")

    @property
    def fingerprint(self) -> bytes:
        return self.public_key.fingerprint

    def serialize(self) -> bytes:
        """Envelope: length | exponent | fingerprint | fixed-width value."""
        width = self.public_key.ciphertext_bytes
        return (width.to_bytes(4, "big")
                + self.exponent.to_bytes(2, "big", signed=True)
                + self.fingerprint
                + self.value.to_bytes(width, "big"))


def zero_ciphertext(public_key: PublicKey, exponent: int = MICRO_EXPONENT,
                    base: int = DEFAULT_BASE) -> Ciphertext:
    """The multiplicative identity 1, a deterministic encryption of zero.

    Used as the neutral element when folding ciphertext sums; it is not
    blinded, which is fine for an accumulator seed (adding any blinded
    ciphertext re-randomizes the fold).
    """
    return Ciphertext(public_key, 1, exponent, base)


def parse_ciphertext(buf: bytes, offset: int, key_registry) -> tuple[Ciphertext, int]:
    """Parse one serialized ciphertext envelope starting at *offset*.

    ``key_registry`` maps fingerprints to :class:`PublicKey` instances.
    """
    width = int.from_bytes(buf[offset:offset + 4], "big")
    exponent = int.from_bytes(buf[offset + 4:offset + 6], "big", signed=True)
    fingerprint = buf[offset + 6:offset + 14]
    public_key = key_registry.get(fingerprint)
    if public_key is None:
        raise KeyMismatchError(f"unknown key fingerprint {fingerprint.hex()}")
    start = offset + ENVELOPE_HEADER_BYTES
    value = int.from_bytes(buf[start:start + width], "big")
    return Ciphertext(public_key, value, exponent), start + width


def _random_blinding(n: int) -> int:
    while True:
        r = secrets.randbelow(n - 1) + 1
        if math.gcd(r, n) == 1:
            return r


def encrypt(public_key: PublicKey, plaintext, r: int | None = None) -> Ciphertext:
    """Encrypt an :class:`EncodedNumber` (or a value, encoded on the fly).

    Computes ``g^m * r^n mod n^2`` with a fresh uniform blinding factor
    ``r`` from ``Z*_n`` unless one is given explicitly.
    """
    if not isinstance(plaintext, EncodedNumber):
        plaintext = encode(public_key, plaintext)
    if plaintext.public_key != public_key:
        raise KeyMismatchError("encoded number belongs to a different key")
    n, nsquare = public_key.n, public_key.nsquare
    if r is None:
        r = _random_blinding(n)
    else:
        if r <= 0 or r >= n or math.gcd(r, n) != 1:
            raise InvalidBlindingError(f"r={r} is not a unit in Z*_n")
    if public_key.g == n + 1:
        # (n+1)^m = 1 + m*n (mod n^2)
        g_m = (1 + plaintext.mantissa * n) % nsquare
    else:
        g_m = gmpy2.powmod(public_key.g, plaintext.mantissa, nsquare)
    value = int(g_m * gmpy2.powmod(r, n, nsquare) % nsquare)
    ops.tick(ops.HOMO_ENC)
    return Ciphertext(public_key, value, plaintext.exponent, plaintext.base)


def decrypt(private_key: PrivateKey, ciphertext: Ciphertext) -> EncodedNumber:
    """Decrypt to an :class:`EncodedNumber` (exponent passes through)."""
    public_key = private_key.public_key
    if ciphertext.fingerprint != public_key.fingerprint:
        raise KeyMismatchError("ciphertext was produced under a different key")
    c = mpz(ciphertext.value)
    if private_key._crt is not None:
        p, q, psq, qsq, hp, hq, p_inv_q = private_key._crt
        mp = _l_function(gmpy2.powmod(c % psq, p - 1, psq), p) * hp % p
        mq = _l_function(gmpy2.powmod(c % qsq, q - 1, qsq), q) * hq % q
        mantissa = int(mp + (mq - mp) * p_inv_q % q * p)
    else:
        n, nsquare = public_key.n, public_key.nsquare
        u = gmpy2.powmod(c, private_key.lambda_, nsquare)
        mantissa = int(_l_function(u, n) * private_key.mu % n)
    ops.tick(ops.HOMO_DEC)
    return EncodedNumber(public_key, mantissa, ciphertext.exponent, ciphertext.base)


def decrypt_to_decimal(private_key: PrivateKey, ciphertext: Ciphertext) -> Decimal:
    return decode(decrypt(private_key, ciphertext))


def _check_exponent_capacity(public_key: PublicKey, exponent: int, base: int):
    if exponent < 0 and 3 * base ** (-exponent) >= public_key.n:
        raise EncodingOverflowError(
            f"exponent {exponent} is too fine for a {public_key.key_bits}-bit modulus")


def decrease_exponent_to(ciphertext: Ciphertext, exponent: int) -> Ciphertext:
    """Rescale to a finer exponent (plaintext value unchanged)."""
    if exponent > ciphertext.exponent:
        raise ValueError("can only rescale to a smaller (finer) exponent")
    if exponent == ciphertext.exponent:
        return ciphertext
    _check_exponent_capacity(ciphertext.public_key, exponent, ciphertext.base)
    factor = ciphertext.base ** (ciphertext.exponent - exponent)
    value = int(gmpy2.powmod(ciphertext.value, factor, ciphertext.public_key.nsquare))
    return Ciphertext(ciphertext.public_key, value, exponent, ciphertext.base)


def hom_add(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    """Ciphertext of the sum of the two operand plaintexts.

    If the exponents differ, the coarser operand is rescaled first so the
    result keeps the finer precision.
    """
    if a.fingerprint != b.fingerprint:
        raise KeyMismatchError("cannot add ciphertexts under different keys")
    if a.base != b.base:
        raise PheError("cannot add ciphertexts with different encoding bases")
    if a.exponent > b.exponent:
        a = decrease_exponent_to(a, b.exponent)
    elif b.exponent > a.exponent:
        b = decrease_exponent_to(b, a.exponent)
    value = a.value * b.value % a.public_key.nsquare
    return Ciphertext(a.public_key, int(value), a.exponent, a.base)


def mul_plain(a: Ciphertext, k: EncodedNumber) -> Ciphertext:
    """Ciphertext of plaintext(a) * value(k).

    Negative scalars exponentiate the modular inverse of the ciphertext;
    the result exponent is the sum of the operand exponents.
    """
    if a.fingerprint != k.public_key.fingerprint:
        raise KeyMismatchError("scalar was encoded for a different key")
    if a.base != k.base:
        raise PheError("scalar base differs from ciphertext base")
    exponent = a.exponent + k.exponent
    _check_exponent_capacity(a.public_key, exponent, a.base)
    signed = k.signed_mantissa()
    nsquare = a.public_key.nsquare
    if signed < 0:
        inverse = gmpy2.invert(a.value, nsquare)
        value = int(gmpy2.powmod(inverse, -signed, nsquare))
    else:
        value = int(gmpy2.powmod(a.value, signed, nsquare))
    return Ciphertext(a.public_key, value, exponent, a.base)


def negate(a: Ciphertext) -> Ciphertext:
    """Ciphertext of the negated plaintext (exponent unchanged)."""
    return mul_plain(a, EncodedNumber(a.public_key, a.public_key.n - 1, 0, a.base))


def hom_sub(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    return hom_add(a, negate(b))
