"""Smart-meter protocol: deviation computation and payload construction.

At the end of each trading period the meter splits its reading into the
volume committed at the P2P auction and the individual deviation from it,

    deviation = bid_type * reading - committed,   so that
    reading   = bid_type * (committed + deviation),

then encrypts both values twice (once under the contracted supplier's key,
once under the grid operator's key) and emits a payload of exactly four
ciphertexts plus four one-byte sign/status flags. The flags stay in the
clear so the trading platform can branch on them without ciphertext
comparisons; the deviation sign is ternary because the billing models
branch on deviation == 0 as its own case.
"""
from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal

from . import phe
from .market import SlotTruth, indev_sign, net_consumption_type

FLAG_BYTES = 4


@dataclass(frozen=True)
class MeterPayload:
    """The eight-field meter message: 4 plaintext flags + 4 ciphertexts."""

    is_bid_accepted: int          # 1 accepted, 0 otherwise
    bid_type: int                 # +1 buy bid, -1 sell offer
    net_consumption_type: int     # +1 net import, -1 net export
    indev_sign: int               # sign of the deviation, in {-1, 0, +1}
    committed_for_supplier: phe.Ciphertext
    indev_for_supplier: phe.Ciphertext
    committed_for_gridop: phe.Ciphertext
    indev_for_gridop: phe.Ciphertext

    @property
    def flags(self) -> tuple[int, int, int, int]:
        return (self.is_bid_accepted, self.bid_type,
                self.net_consumption_type, self.indev_sign)

    @property
    def ciphertexts(self) -> tuple[phe.Ciphertext, ...]:
        return (self.committed_for_supplier, self.indev_for_supplier,
                self.committed_for_gridop, self.indev_for_gridop)


def individual_deviation(bid_type: int, meter_reading: Decimal,
                         committed_volume: Decimal) -> Decimal:
    """bid_type * meter_reading - committed_volume."""
    if committed_volume < 0:
        raise ValueError("committed volume must be non-negative")
    return bid_type * meter_reading - committed_volume


def build_payload(truth: SlotTruth, supplier_pk: phe.PublicKey,
                  gridop_pk: phe.PublicKey) -> MeterPayload:
    """Encrypt one slot's metering data; performs exactly four encryptions."""
    deviation = individual_deviation(truth.bid_type, truth.meter_reading,
                                     truth.committed_volume)
    return MeterPayload(
        is_bid_accepted=1 if truth.bid_accepted else 0,
        bid_type=truth.bid_type,
        net_consumption_type=net_consumption_type(truth.meter_reading),
        indev_sign=indev_sign(deviation),
        committed_for_supplier=phe.encrypt(supplier_pk, phe.encode(supplier_pk, truth.committed_volume)),
        indev_for_supplier=phe.encrypt(supplier_pk, phe.encode(supplier_pk, deviation)),
        committed_for_gridop=phe.encrypt(gridop_pk, phe.encode(gridop_pk, truth.committed_volume)),
        indev_for_gridop=phe.encrypt(gridop_pk, phe.encode(gridop_pk, deviation)),
    )


def serialize_payload(payload: MeterPayload) -> bytes:
    """Wire form: 4 signed flag bytes, then the 4 ciphertext envelopes in
    fixed order (committed_S, indev_S, committed_G, indev_G)."""
    parts = [b"".join(f.to_bytes(1, "big", signed=True) for f in payload.flags)]
    for ct in payload.ciphertexts:
        parts.append(ct.serialize())
    return b"".join(parts)


def parse_payload(data: bytes, key_registry) -> MeterPayload:
    flags = [int.from_bytes(data[i:i + 1], "big", signed=True) for i in range(FLAG_BYTES)]
    offset = FLAG_BYTES
    cts = []
    for _ in range(4):
        ct, offset = phe.parse_ciphertext(data, offset, key_registry)
        cts.append(ct)
    if offset != len(data):
        raise ValueError("trailing bytes after payload")
    return MeterPayload(flags[0], flags[1], flags[2], flags[3], *cts)


def payload_body_bits(payload: MeterPayload) -> int:
    """Table-accounting bits: 4 x (|ciphertext| + |boolean|)."""
    return sum(ct.public_key.ciphertext_bytes * 8 for ct in payload.ciphertexts) + FLAG_BYTES * 8


def payload_overhead_bits() -> int:
    """Envelope headers beyond the table accounting."""
    return 4 * phe.ENVELOPE_HEADER_BYTES * 8
