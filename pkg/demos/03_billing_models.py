"""The four billing models on one hand-sized market slot.

Three consumers committed 3 kWh each with deviations -1, +1 and +2 kWh, and
one prosumer committed 6 kWh delivered exactly. Prices: FiT 0.05, TP 0.10,
RP 0.20. Every encrypted bill is decrypted and checked against the exact
plaintext oracle.
"""
from decimal import Decimal

from ppbsp import billing, meter, phe
from ppbsp.billing import AddressedPayload, BillingModel, KeyDomain, PlainAggregates
from ppbsp.fixedpoint import as_fraction, fraction_to_decimal
from ppbsp.market import BUY, SELL, DEFAULT_SCHEDULE, SlotTruth

supplier_pk, supplier_sk = phe.keygen(256)
gridop_pk, gridop_sk = phe.keygen(256)

truths = [
    SlotTruth("C_1", Decimal(3), Decimal(2), True, BUY),    # under-consumed by 1
    SlotTruth("C_2", Decimal(3), Decimal(4), True, BUY),    # over-consumed by 1
    SlotTruth("C_3", Decimal(3), Decimal(5), True, BUY),    # over-consumed by 2
    SlotTruth("P_1", Decimal(6), Decimal(-6), True, SELL),  # delivered exactly
]
supplier_of = {t.user_id: "S_1" for t in truths}

payloads = [AddressedPayload(t.user_id, "S_1",
                             meter.build_payload(t, supplier_pk, gridop_pk))
            for t in truths]
aggregates = PlainAggregates.from_truths(truths)
print(f"aggregates: T_c_under={aggregates.t_c_under} T_c_over={aggregates.t_c_over} "
      f"TDD={aggregates.tdd} TSD={aggregates.tsd} TD={aggregates.td}\n")

header = f"{'user':6s}" + "".join(f"{m.value:>14s}" for m in BillingModel)
print(header)
rows = {t.user_id: [] for t in truths}
for model in BillingModel:
    out = billing.bill_slot(model, payloads, DEFAULT_SCHEDULE, KeyDomain.SUPPLIER,
                            {"S_1": supplier_pk}, aggregates=aggregates)
    oracle = billing.oracle_bill(model, truths, DEFAULT_SCHEDULE, supplier_of)
    for uid, ct in out.bill_or_reward.items():
        value = phe.decrypt_to_decimal(supplier_sk, ct)
        assert as_fraction(value) == oracle.bill_or_reward[uid], "oracle disagrees"
        rows[uid].append(value)
for uid, values in rows.items():
    print(f"{uid:6s}" + "".join(f"{v:14.6f}" for v in values))

print("\npositive = user owes, negative = user is owed")
print("note how netting shrinks deviation costs from status_quo/individual")
print("to the weighted models; the retail-market volume shrinks accordingly:")
for model in BillingModel:
    print(f"  {model.value:12s} V_RM = "
          f"{billing.rm_volume(model, truths)} kWh")
