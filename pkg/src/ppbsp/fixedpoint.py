"""Exact decimal fixed-point helpers shared by the money and energy paths.

All energy volumes and currency amounts live on a base-10 grid with
quantum 10^-6 (one micro-unit). Arithmetic that has to be bit-exact across
runs is done on integers or :class:`fractions.Fraction`; ``Decimal`` is the
boundary representation used in public data structures and in serialized
files. Binary floating point never touches a money path.
"""
from __future__ import annotations

from decimal import Decimal, localcontext
from fractions import Fraction

# Quantum of the value grid: 10^MICRO_EXPONENT units.
MICRO_EXPONENT = -6
MICRO = 10 ** (-MICRO_EXPONENT)

# Plaintext ratios (aggregate divisions) are rounded to this finer grid
# before being applied as scalars, so that the rounding error they inject
# into market-wide money conservation stays far below one micro-unit.
RATIO_EXPONENT = -12

# Generous precision for exact Decimal construction/summation; the widest
# values in the pipeline carry ~30 significant digits.
_EXACT_PREC = 120


def parse_decimal(text) -> Decimal:
    """Parse a decimal string (or int) exactly."""
    if isinstance(text, Decimal):
        return text
    if isinstance(text, float):
        raise TypeError("floats are not accepted on money/energy paths; pass str or Decimal")
    return Decimal(text)


def to_micro(value: Decimal | int | str) -> int:
    """Integer number of micro-units in *value*; rejects off-grid values."""
    frac = as_fraction(value) * MICRO
    if frac.denominator != 1:
        raise ValueError(f"{value} is not on the 10^{MICRO_EXPONENT} grid")
    return frac.numerator


def from_micro(micro: int) -> Decimal:
    return Decimal(micro).scaleb(MICRO_EXPONENT)


def as_fraction(value) -> Fraction:
    """Exact rational view of an int/str/Decimal/Fraction value."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        raise TypeError("floats are not accepted on money/energy paths; pass str or Decimal")
    return Fraction(parse_decimal(value))


def fraction_to_decimal(frac: Fraction) -> Decimal:
    """Exact Decimal for a fraction whose denominator divides a power of 10."""
    num, den = frac.numerator, frac.denominator
    scale = 0
    while den % 10 == 0:
        den //= 10
        scale += 1
    while den % 2 == 0:
        den //= 2
        num *= 5
        scale += 1
    while den % 5 == 0:
        den //= 5
        num *= 2
        scale += 1
    if den != 1:
        raise ValueError(f"{frac} has no finite decimal representation")
    return Decimal(num).scaleb(-scale)


def scaled_decimal(mantissa: int, exponent: int) -> Decimal:
    """mantissa * 10^exponent, exactly."""
    with localcontext() as ctx:
        ctx.prec = _EXACT_PREC
        return Decimal(mantissa).scaleb(exponent)


def dsum(values) -> Decimal:
    """Exact sum of Decimals (context wide enough to never round)."""
    with localcontext() as ctx:
        ctx.prec = _EXACT_PREC
        total = Decimal(0)
        for v in values:
            total += v
        return total


def quantize_ratio(numerator, denominator, exponent: int = RATIO_EXPONENT) -> Decimal:
    """numerator/denominator rounded half-even onto the 10^exponent grid."""
    num = as_fraction(numerator)
    den = as_fraction(denominator)
    if den == 0:
        raise ZeroDivisionError("ratio denominator is zero")
    # round() on Fraction is exact and rounds halves to even.
    steps = round(num * Fraction(10) ** (-exponent) / den)
    return scaled_decimal(steps, exponent)


def format_decimal(value: Decimal) -> str:
    """Plain (non-scientific) string with trailing zeros stripped."""
    normalized = value.normalize()
    return format(normalized, "f")
