"""Additive homomorphic encryption on signed fixed-point numbers.

Walks through key generation, the hand-checkable tiny keypair, encryption
with and without an explicit blinding factor, ciphertext addition, and
plaintext-scalar multiplication.
"""
from decimal import Decimal

from ppbsp import phe

# A deterministic toy keypair (p=5, q=7) small enough to follow by hand:
# n = 35, g = n+1 = 36, lambda = lcm(4, 6) = 12, mu = 12^-1 mod 35 = 3.
tiny_pk, tiny_sk = phe.keygen(primes=(5, 7))
print(f"toy key:   n={tiny_pk.n} g={tiny_pk.g} lambda={tiny_sk.lambda_} mu={tiny_sk.mu}")

ct = phe.encrypt(tiny_pk, phe.EncodedNumber(tiny_pk, 4, 0), r=2)
print(f"Enc(4; r=2) = 36^4 * 2^35 mod 1225 = {ct.value}")
print(f"Dec -> {phe.decode(phe.decrypt(tiny_sk, ct))}")

# Real keys: 2048-bit is the production default, 256-bit in examples for speed.
pk, sk = phe.keygen(256)
print(f"\ntest key:  {pk!r}")

# Values are encoded on a base-10 grid (default 1e-6). Negative values live
# in the top third of Z_n; the middle third is an overflow trap.
half = phe.encrypt(pk, phe.encode(pk, Decimal("2.5")))
minus_half = phe.encrypt(pk, phe.encode(pk, Decimal("-2.5")))
print("2.5 + (-2.5)      ->", phe.decode(phe.decrypt(sk, phe.hom_add(half, minus_half))))

a = phe.encrypt(pk, phe.encode(pk, Decimal("1.1")))
b = phe.encrypt(pk, phe.encode(pk, Decimal("2.2")))
print("1.1 + 2.2         ->", phe.decode(phe.decrypt(sk, phe.hom_add(a, b))))

# Scalar multiplication quantizes the scalar on its own grid: 3.0 * 0.6667
# is exactly 2.0001 at four decimal places of the scalar.
three = phe.encrypt(pk, phe.encode(pk, Decimal("3.0")))
scaled = phe.mul_plain(three, phe.encode(pk, Decimal("0.6667"), exponent=-4))
print("3.0 * 0.6667      ->", phe.decode(phe.decrypt(sk, scaled)))

# Encryption is randomized: equal plaintexts give different ciphertexts.
enc = phe.encode(pk, Decimal("42"))
print("same plaintext, distinct ciphertexts:",
      phe.encrypt(pk, enc).value != phe.encrypt(pk, enc).value)

# A thousand tiny ciphertexts fold into an exact sum.
acc = phe.zero_ciphertext(pk)
for _ in range(1000):
    acc = phe.hom_add(acc, phe.encrypt(pk, phe.encode(pk, Decimal("0.001"))))
print("fold of 1000 x 0.001 ->", phe.decode(phe.decrypt(sk, acc)))
