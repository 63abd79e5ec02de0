"""A complete billing period: meters to regulator, honest and dishonest.

Generates a 12-user market, runs all three protocol phases under the
universal cost split, verifies every decrypted output against the
plaintext oracle, then reruns with one supplier misreporting its residue
to show the audit path isolating the culprit.
"""
from decimal import Decimal

from ppbsp import market, simnet
from ppbsp.billing import BillingModel

scenario = market.generate(seed=2024, n_users=12, n_suppliers=3, n_slots=6,
                           deviation_spread="1.5", rejected_fraction=0.2)
print(f"scenario: {scenario.n_users} users, {scenario.n_suppliers} suppliers, "
      f"{scenario.slots_per_billing_period} slots")

sim = simnet.Simulation(scenario, BillingModel.UNIVERSAL, key_bits=256)
result = sim.run()

print(f"\nregulator verdict: {result.regulator_report.verdict}")
print("supplier residues (sum to zero):")
for sid, ledger in sorted(result.supplier_ledgers.items()):
    print(f"  {sid}: balance {ledger.monthly_balance:+.6f}  residue {ledger.residue:+.6f}")
print(f"residue sum: {result.regulator_report.total:.2E}")
if result.regulator_report.transfers:
    print("redistribution plan:")
    for src, dst, amount in result.regulator_report.transfers:
        print(f"  {src} -> {dst}: {amount}")

mismatches = simnet.verify_against_oracle(scenario, BillingModel.UNIVERSAL, result)
print(f"\noracle verification: {len(mismatches)} mismatches")

print("\nmonthly bills (positive = owes supplier):")
for uid in sorted(result.monthly_bills, key=lambda u: int(u.split('_')[1]))[:6]:
    print(f"  {uid}: {result.monthly_bills[uid]:+.6f}")
print("  ...")

# Phase 2/3 cost accounting for the whole run
metrics = result.metrics
print(f"\noperation totals: SM HomoEnc={metrics.role_total(simnet.Role.SMART_METER, 'HomoEnc')}"
      f" TrPlat BillCalc={metrics.role_total(simnet.Role.TRADING_PLATFORM, 'BillCalc')}"
      f" GridOp HomoDec={metrics.role_total(simnet.Role.GRID_OPERATOR, 'HomoDec')}"
      f" Supplier HomoDec={metrics.role_total(simnet.Role.SUPPLIER, 'HomoDec')}")

# Now a dishonest supplier: S_2 inflates its reported residue by 0.10.
print("\n--- rerun with S_2 misreporting its residue by +0.10 ---")
dishonest = simnet.Simulation(scenario, BillingModel.UNIVERSAL, key_bits=256)
bad_result = dishonest.run(inject_dishonest="S_2", perturbation=Decimal("0.10"))
report = bad_result.regulator_report
print(f"verdict: {report.verdict}")
for finding in report.findings:
    print(f"audit finding: {finding.supplier_id} reported "
          f"{finding.reported:+.6f} but the grid operator recomputed "
          f"{finding.recomputed:+.6f}")
