"""What a smart meter sends at the end of a trading period.

The meter splits its reading into the committed P2P volume and the
deviation from it, encrypts both under two keys (contracted supplier and
grid operator), and attaches four plaintext flags that let the trading
platform branch without comparing ciphertexts.
"""
from decimal import Decimal

from ppbsp import meter, phe
from ppbsp.market import BUY, SELL, SlotTruth

supplier_pk, supplier_sk = phe.keygen(256)
gridop_pk, gridop_sk = phe.keygen(256)

# A consumer committed to buying 3 kWh but actually drew 4 kWh.
truth = SlotTruth(user_id="U_1", committed_volume=Decimal("3"),
                  meter_reading=Decimal("4"), bid_accepted=True, bid_type=BUY)
deviation = meter.individual_deviation(truth.bid_type, truth.meter_reading,
                                       truth.committed_volume)
print(f"reading {truth.meter_reading} kWh = bid_type*(committed {truth.committed_volume} "
      f"+ deviation {deviation})")

payload = meter.build_payload(truth, supplier_pk, gridop_pk)
print(f"flags: accepted={payload.is_bid_accepted} bid_type={payload.bid_type:+d} "
      f"net={payload.net_consumption_type:+d} dev_sign={payload.indev_sign:+d}")

# Both key domains decrypt to the same values.
print("supplier sees deviation:",
      phe.decode(phe.decrypt(supplier_sk, payload.indev_for_supplier)))
print("grid op sees deviation: ",
      phe.decode(phe.decrypt(gridop_sk, payload.indev_for_gridop)))

# The wire form: 4 flag bytes + 4 fixed-width ciphertext envelopes.
data = meter.serialize_payload(payload)
print(f"\nwire size: {len(data)} bytes "
      f"({meter.payload_body_bits(payload)} body bits + "
      f"{meter.payload_overhead_bits()} header bits)")
registry = {supplier_pk.fingerprint: supplier_pk, gridop_pk.fingerprint: gridop_pk}
assert meter.parse_payload(data, registry) == payload

# A prosumer that exported exactly its committed volume: zero deviation.
perfect = SlotTruth(user_id="U_2", committed_volume=Decimal("3"),
                    meter_reading=Decimal("-3"), bid_accepted=True, bid_type=SELL)
payload2 = meter.build_payload(perfect, supplier_pk, gridop_pk)
print(f"\nperfect prosumer: dev_sign={payload2.indev_sign} "
      f"(deviation {meter.individual_deviation(SELL, perfect.meter_reading, perfect.committed_volume)})")
