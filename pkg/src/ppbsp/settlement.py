"""Aggregate decryption, supplier settlement, and the regulator's zero-sum check.

The trading platform folds the grid-operator-keyed deviation ciphertexts of
the accepted bids into four market aggregates; the grid operator decrypts
exactly those four values per slot and derives the demand/supply/total
deviations locally. At the end of the billing period each supplier sums its
slot balances, decrypts its customers' final bills, and reports the P2P
residue

    residue = (sum of customer bills - sum of customer rewards) - balance,

the capital it holds purely as an intermediary of P2P trades. Honest
residues sum to zero market-wide; a non-zero sum triggers an audit in which
the grid operator recomputes every supplier's residue from the backup
ciphertexts kept under its own key and flags the mismatching reporters.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import Decimal

from . import phe
from .billing import AddressedPayload, PlainAggregates
from .fixedpoint import MICRO_EXPONENT, dsum, format_decimal, parse_decimal
from .market import BUY

# One micro-unit: rounding slack for "equal to zero" checks on money sums.
RESIDUE_TOLERANCE = Decimal("0.000001")


@dataclass(frozen=True)
class EncryptedAggregates:
    """The slot's four deviation totals under the grid operator's key."""

    t_c_under: phe.Ciphertext
    t_c_over: phe.Ciphertext
    t_p_under: phe.Ciphertext
    t_p_over: phe.Ciphertext

    @property
    def ciphertexts(self):
        return (self.t_c_under, self.t_c_over, self.t_p_under, self.t_p_over)

    def __post_init__(self):
        prints = {ct.fingerprint for ct in self.ciphertexts}
        if len(prints) != 1:
            raise phe.KeyMismatchError("aggregates must share one key")


def aggregate_deviations(payloads: list[AddressedPayload],
                         gridop_pk: phe.PublicKey) -> EncryptedAggregates:
    """Fold accepted bids' deviation ciphertexts into the four aggregates.

    Routing uses only the plaintext flags: consumer deviations go to the
    demand-side totals, prosumer deviations to the supply side, negatives
    are folded negated so every aggregate decrypts to a magnitude. Zero
    deviations contribute to none.
    """
    zero = phe.zero_ciphertext(gridop_pk, MICRO_EXPONENT)
    sums = {"c_under": zero, "c_over": zero, "p_under": zero, "p_over": zero}
    for addressed in payloads:
        payload = addressed.payload
        if not payload.is_bid_accepted or payload.indev_sign == 0:
            continue
        indev = payload.indev_for_gridop
        if indev.fingerprint != gridop_pk.fingerprint:
            raise phe.KeyMismatchError("payload deviation is not under the grid operator key")
        side = "c" if payload.bid_type == BUY else "p"
        if payload.indev_sign < 0:
            key = f"{side}_under"
            sums[key] = phe.hom_add(sums[key], phe.negate(indev))
        else:
            key = f"{side}_over"
            sums[key] = phe.hom_add(sums[key], indev)
    return EncryptedAggregates(sums["c_under"], sums["c_over"],
                               sums["p_under"], sums["p_over"])


def gridop_decrypt_aggregates(aggregates: EncryptedAggregates,
                              gridop_sk: phe.PrivateKey) -> PlainAggregates:
    """Decrypt the four aggregates (exactly four decryptions).

    The derived TDD/TSD/TD values are properties of the result, computed
    locally rather than transmitted.
    """
    values = [phe.decrypt_to_decimal(gridop_sk, ct) for ct in aggregates.ciphertexts]
    return PlainAggregates(*values)


@dataclass
class SupplierLedger:
    """One supplier's settlement state for a billing period."""

    supplier_id: str
    slot_balances: list[Decimal]
    customer_bills: dict[str, Decimal]
    monthly_balance: Decimal = field(init=False)
    residue: Decimal = field(init=False)

    def __post_init__(self):
        self.monthly_balance = dsum(self.slot_balances)
        net_billed = dsum(self.customer_bills.values())
        self.residue = net_billed - self.monthly_balance


def supplier_settle(supplier_id: str, slot_balances: list[Decimal],
                    encrypted_bills: dict[str, phe.Ciphertext],
                    supplier_sk: phe.PrivateKey,
                    customer_ids) -> SupplierLedger:
    """Decrypt the customers' final bills and compute the P2P residue.

    Performs one decryption per customer. Signed bills already fold rewards
    in as negative values, so "bills - rewards" is their plain sum.
    """
    roster = set(customer_ids)
    if set(encrypted_bills) != roster:
        missing = roster - set(encrypted_bills)
        extra = set(encrypted_bills) - roster
        raise ValueError(
            f"bill set does not match customer roster of {supplier_id}: "
            f"missing={sorted(missing)} unexpected={sorted(extra)}")
    customer_bills = {
        user_id: phe.decrypt_to_decimal(supplier_sk, ct)
        for user_id, ct in encrypted_bills.items()
    }
    return SupplierLedger(supplier_id=supplier_id, slot_balances=list(slot_balances),
                          customer_bills=customer_bills)


@dataclass
class AuditFinding:
    supplier_id: str
    reported: Decimal
    recomputed: Decimal


@dataclass
class RegulatorReport:
    residues: dict[str, Decimal]
    total: Decimal
    verdict: str                      # "settled" | "audit_required"
    findings: list[AuditFinding] = field(default_factory=list)
    transfers: list[tuple[str, str, Decimal]] = field(default_factory=list)

    def to_json(self) -> str:
        doc = {
            "residues": {k: format_decimal(v) for k, v in sorted(self.residues.items())},
            "total": format_decimal(self.total),
            "verdict": self.verdict,
            "findings": [
                {"supplier_id": f.supplier_id,
                 "reported": format_decimal(f.reported),
                 "recomputed": format_decimal(f.recomputed)}
                for f in self.findings
            ],
            "transfers": [
                {"from": a, "to": b, "amount": format_decimal(v)}
                for a, b, v in self.transfers
            ],
        }
        return json.dumps(doc, indent=2) + "\n"


def regulator_check(residues: dict[str, Decimal], expected_suppliers,
                    tolerance: Decimal = RESIDUE_TOLERANCE) -> RegulatorReport:
    """Zero-sum check over all supplier residues.

    Settled runs also get a redistribution plan: the list of
    supplier-to-supplier transfers that zeroes every residue (computing the
    plan is in scope; moving the money is not).
    """
    missing = set(expected_suppliers) - set(residues)
    if missing:
        raise ValueError(f"missing residue reports from {sorted(missing)}")
    total = dsum(residues.values())
    if abs(total) <= tolerance:
        return RegulatorReport(residues=dict(residues), total=total, verdict="settled",
                               transfers=redistribution_plan(residues, tolerance))
    return RegulatorReport(residues=dict(residues), total=total, verdict="audit_required")


def redistribution_plan(residues: dict[str, Decimal],
                        tolerance: Decimal = RESIDUE_TOLERANCE):
    """Greedy largest-creditor-to-largest-debtor matching.

    A positive residue is P2P capital the supplier holds on behalf of the
    market and must pay out; a negative residue is capital owed to it.
    """
    holders = sorted(((sid, v) for sid, v in residues.items() if v > tolerance),
                     key=lambda kv: (-kv[1], kv[0]))
    owed = sorted(((sid, -v) for sid, v in residues.items() if v < -tolerance),
                  key=lambda kv: (-kv[1], kv[0]))
    transfers = []
    i = j = 0
    holders = [[sid, v] for sid, v in holders]
    owed = [[sid, v] for sid, v in owed]
    while i < len(holders) and j < len(owed):
        amount = min(holders[i][1], owed[j][1])
        transfers.append((holders[i][0], owed[j][0], amount))
        holders[i][1] -= amount
        owed[j][1] -= amount
        if holders[i][1] <= tolerance:
            i += 1
        if owed[j][1] <= tolerance:
            j += 1
    return transfers


def audit(backup_aggregates: dict[str, tuple[phe.Ciphertext, phe.Ciphertext]],
          reported_residues: dict[str, Decimal],
          gridop_sk: phe.PrivateKey,
          tolerance: Decimal = RESIDUE_TOLERANCE) -> list[AuditFinding]:
    """Recompute every supplier's residue from the grid-operator-keyed
    backups (two decryptions per supplier: aggregate customer bills and
    aggregate balance) and flag reports that disagree beyond *tolerance*."""
    findings = []
    for supplier_id in sorted(reported_residues):
        bills_ct, balance_ct = backup_aggregates[supplier_id]
        net_billed = phe.decrypt_to_decimal(gridop_sk, bills_ct)
        balance = phe.decrypt_to_decimal(gridop_sk, balance_ct)
        recomputed = net_billed - balance
        reported = reported_residues[supplier_id]
        if abs(reported - recomputed) > tolerance:
            findings.append(AuditFinding(supplier_id=supplier_id,
                                         reported=reported,
                                         recomputed=recomputed))
    return findings


def parse_regulator_report(text: str) -> RegulatorReport:
    doc = json.loads(text)
    return RegulatorReport(
        residues={k: parse_decimal(v) for k, v in doc["residues"].items()},
        total=parse_decimal(doc["total"]),
        verdict=doc["verdict"],
        findings=[AuditFinding(f["supplier_id"], parse_decimal(f["reported"]),
                               parse_decimal(f["recomputed"]))
                  for f in doc["findings"]],
        transfers=[(t["from"], t["to"], parse_decimal(t["amount"]))
                   for t in doc["transfers"]],
    )
